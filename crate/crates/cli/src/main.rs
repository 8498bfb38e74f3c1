//! `delayctl` — sparse measure-valued control of delayed reaction-diffusion
//! equations: full optimization runs, forward solves, optimality checks,
//! derivative self-tests, and the published result tables.

use clap::{Args, Parser, Subcommand};
use delay_control::config::ConfigData;
use delay_control::io;
use delay_control::measures::{AtomicMeasure, ControlGrid, Measure};
use delay_control::optimality::{compute_lambda, optimality_report, tracking_cost};
use delay_control::pde::{solve_adjoint, solve_state, y_norm_diff};
use delay_control::presets::{Example1Options, EXAMPLE2_NU_VALUES};
use delay_control::ssn::continuation_solve;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "delayctl",
    about = "Sparse optimal control of parabolic equations with measure-valued delay kernels",
    version
)]
struct Cli {
    /// Worker threads for batch subcommands (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Reserved for future stochastic features; no randomness is used.
    #[arg(long, global = true, hide = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ProblemArgs {
    /// Configuration file (flat `key = value` format; see README).
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Preset name (example1..example5) used when no config is given.
    #[arg(long, short = 'p')]
    preset: Option<String>,
    /// Override: sparsity weight ν.
    #[arg(long)]
    nu: Option<f64>,
    /// Override: control grid, either an interval count or a CSV file of
    /// nodes (`t` column).
    #[arg(long, value_name = "N|FILE")]
    control_grid: Option<String>,
    /// Output directory.
    #[arg(long, short = 'o', default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full continuation solve and write all artifacts.
    Solve(ProblemArgs),
    /// Solve the state equation at a given control and export the
    /// trajectory.
    Forward {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Control measure as `t,weight` CSV.
        control: PathBuf,
    },
    /// Evaluate the subgradient field at a given control and report the
    /// sparsity diagnostics.
    CheckOptimality {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Control measure as `t,weight` CSV.
        control: PathBuf,
    },
    /// Run the derivative and adjointness self-tests on a small problem.
    Gradcheck {
        #[command(flatten)]
        problem: ProblemArgs,
    },
    /// Reproduce the manufactured-example rows (control spacing 3^-k).
    Table1 {
        /// Exponents k of the control spacing 3^-k.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2u32, 3, 4, 5])]
        rows: Vec<u32>,
        #[arg(long, short = 'o', default_value = "out")]
        out_dir: PathBuf,
    },
    /// Reproduce the ν-sensitivity rows on 65×65 grids.
    Table2 {
        /// ν values; defaults to the published list.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        nu: Option<Vec<f64>>,
        #[arg(long, short = 'o', default_value = "out")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Forward { problem, control } => cmd_forward(&problem, &control),
        Command::CheckOptimality { problem, control } => cmd_check(&problem, &control),
        Command::Gradcheck { problem } => cmd_gradcheck(&problem),
        Command::Table1 { rows, out_dir } => cmd_table1(&rows, &out_dir),
        Command::Table2 { nu, out_dir } => cmd_table2(nu.as_deref(), &out_dir),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(args: &ProblemArgs) -> Result<ConfigData, String> {
    let mut data = match (&args.config, &args.preset) {
        (Some(path), _) => ConfigData::parse_file(path).map_err(|e| e.to_string())?,
        (None, Some(name)) => ConfigData::preset(name).map_err(|e| e.to_string())?,
        (None, None) => return Err("pass --config FILE or --preset NAME".into()),
    };
    if let Some(name) = &args.preset {
        if args.config.is_some() {
            return Err(format!(
                "--preset {name} conflicts with --config; put `preset = {name}` in the file instead"
            ));
        }
    }
    if let Some(nu) = args.nu {
        if !(nu > 0.0) {
            return Err(format!("--nu must be positive, got {nu}"));
        }
        data.nu = nu;
    }
    if let Some(cg) = &args.control_grid {
        if let Ok(n) = cg.parse::<usize>() {
            data.control_intervals = n;
            data.control_nodes = None;
        } else {
            let u = io::read_control_csv(Path::new(cg)).map_err(|e| e.to_string())?;
            data.control_nodes = Some(u.grid().nodes().to_vec());
        }
    }
    Ok(data)
}

fn ensure_dir(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn warn_if_off_grid(spec: &delay_control::pde::ProblemSpec) {
    if !spec.control_atoms_aligned() {
        eprintln!(
            "warning: control grid nodes do not all lie on the state-time grid; \
             delay lookups interpolate (first order)"
        );
    }
}

fn cmd_solve(args: &ProblemArgs) -> Result<ExitCode, String> {
    let data = load_config(args)?;
    let experiment = data.build().map_err(|e| e.to_string())?;
    let spec = &experiment.spec;
    warn_if_off_grid(spec);
    if experiment.long_running {
        eprintln!("note: preset '{}' is long-running", experiment.name);
    }
    let result = continuation_solve(spec, &experiment.settings).map_err(|e| e.to_string())?;

    let out = data
        .output_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| args.out_dir.clone());
    ensure_dir(&out)?;
    let y = solve_state(spec, &Measure::Atomic(result.control.clone()))
        .map_err(|e| e.to_string())?;
    io::write_control_csv(&out.join("control.csv"), &result.control)
        .map_err(|e| e.to_string())?;
    io::write_string(
        &out.join("lambda.csv"),
        &io::lambda_to_csv(&result.control, &result.report.lambda),
    )
    .map_err(|e| e.to_string())?;
    io::write_trajectory_csv(&out.join("state.csv"), &y).map_err(|e| e.to_string())?;
    let mut target_rows = Vec::with_capacity(spec.n_steps() + 1);
    let mut row = vec![0.0; spec.nx()];
    for i in 0..=spec.n_steps() {
        spec.target_row(i, &mut row);
        target_rows.push(row.clone());
    }
    let target_csv = {
        let mut s = String::from("t");
        for j in 0..spec.nx() {
            s.push_str(&format!(",x{j}"));
        }
        s.push('\n');
        for (i, r) in target_rows.iter().enumerate() {
            s.push_str(&format!("{:.16e}", spec.tgrid.nodes()[i]));
            for v in r {
                s.push_str(&format!(",{v:.16e}"));
            }
            s.push('\n');
        }
        s
    };
    io::write_string(&out.join("target.csv"), &target_csv).map_err(|e| e.to_string())?;
    io::write_string(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&io::summary_to_json(&result)).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    io::write_string(&out.join("trace.csv"), &io::trace_to_csv(&result.trace))
        .map_err(|e| e.to_string())?;

    println!(
        "{}: J = {:.6e} (F = {:.6e}, nu*j = {:.6e}), ||u|| = {:.6}, support size {}",
        experiment.name,
        result.report.j_total,
        result.report.f_value,
        result.report.nu_j,
        result.report.norm_u,
        result.report.support.len()
    );
    println!("artifacts written to {}", out.display());
    Ok(if result.converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("warning: continuation flagged non-convergence; see trace.csv");
        ExitCode::from(2)
    })
}

fn cmd_forward(args: &ProblemArgs, control: &Path) -> Result<ExitCode, String> {
    let data = load_config(args)?;
    let experiment = data.build().map_err(|e| e.to_string())?;
    let spec = &experiment.spec;
    let u = io::read_control_csv(control).map_err(|e| e.to_string())?;
    let spec = spec
        .clone()
        .with_control_grid(u.grid().clone())
        .map_err(|e| e.to_string())?;
    warn_if_off_grid(&spec);
    let y = solve_state(&spec, &Measure::Atomic(u.clone())).map_err(|e| e.to_string())?;
    let out = args.out_dir.clone();
    ensure_dir(&out)?;
    io::write_trajectory_csv(&out.join("state.csv"), &y).map_err(|e| e.to_string())?;
    println!(
        "forward solve done: F = {:.6e}, ||u|| = {:.6}; state written to {}",
        tracking_cost(&spec, &y),
        u.total_variation(),
        out.join("state.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: &ProblemArgs, control: &Path) -> Result<ExitCode, String> {
    let data = load_config(args)?;
    let experiment = data.build().map_err(|e| e.to_string())?;
    let u = io::read_control_csv(control).map_err(|e| e.to_string())?;
    let spec = experiment
        .spec
        .clone()
        .with_control_grid(u.grid().clone())
        .map_err(|e| e.to_string())?;
    warn_if_off_grid(&spec);
    let y = solve_state(&spec, &Measure::Atomic(u.clone())).map_err(|e| e.to_string())?;
    let phi = solve_adjoint(&spec, &u, &y).map_err(|e| e.to_string())?;
    let lambda = compute_lambda(&spec, &u, &y, &phi, None);
    let report = optimality_report(&spec, &u, &y, &lambda, None, 1e-6);
    let out = args.out_dir.clone();
    ensure_dir(&out)?;
    io::write_string(&out.join("lambda.csv"), &io::lambda_to_csv(&u, &lambda))
        .map_err(|e| e.to_string())?;
    io::write_string(
        &out.join("optimality.json"),
        &serde_json::to_string_pretty(&io::report_to_json(&report)).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    println!(
        "max|lambda| = {:.6}, support size {}, worst sign violation {:.3e}, J = {:.6e}",
        report.lambda_max_abs,
        report.support.len(),
        report.sign_violation_max,
        report.j_total
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: &ProblemArgs) -> Result<ExitCode, String> {
    // default small configuration unless one is supplied
    let data = match (&args.config, &args.preset) {
        (None, None) => {
            let mut d = ConfigData::preset("example2").map_err(|e| e.to_string())?;
            d.space_nodes = 17;
            d.time_steps = 32;
            d.control_intervals = 16;
            d.target_grid = None;
            d
        }
        _ => load_config(args)?,
    };
    let experiment = data.build().map_err(|e| e.to_string())?;
    let checks = delay_control::gradcheck::run_all(&experiment.spec);
    let mut all_ok = true;
    for check in &checks {
        println!(
            "{}: {} ({})",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
        all_ok &= check.passed;
    }
    Ok(if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_table1(rows: &[u32], out_dir: &Path) -> Result<ExitCode, String> {
    use rayon::prelude::*;
    ensure_dir(out_dir)?;
    let results: Vec<Result<String, String>> = rows
        .par_iter()
        .map(|&k| {
            let e = delay_control::presets::example1(&Example1Options {
                tau_exponent: k,
                ..Default::default()
            })
            .map_err(|e| e.to_string())?;
            let r = continuation_solve(&e.spec, &e.settings).map_err(|e| e.to_string())?;
            // reference state at the exact control on the same grids
            let reference = e.reference.as_ref().expect("manufactured preset");
            let y_tau = solve_state(&e.spec, &Measure::Atomic(r.control.clone()))
                .map_err(|e| e.to_string())?;
            let y_err = y_norm_diff(&e.spec.ops, &e.spec.tgrid, &reference.state, &y_tau);
            Ok(format!(
                "3^-{k},{:.6e},{:.6},{:.6e},{:.6e},{},{}",
                y_err,
                r.report.norm_u,
                r.report.f_value,
                r.report.nu_j,
                r.report.support.len(),
                if r.converged { "ok" } else { "flagged" }
            ))
        })
        .collect();
    let mut csv = String::from("tau,y_err_Y,norm_u,F,nu_j,support,status\n");
    let mut code = ExitCode::SUCCESS;
    for r in results {
        match r {
            Ok(line) => {
                println!("{line}");
                csv.push_str(&line);
                csv.push('\n');
            }
            Err(e) => {
                eprintln!("row failed: {e}");
                code = ExitCode::from(2);
            }
        }
    }
    io::write_string(&out_dir.join("table1.csv"), &csv).map_err(|e| e.to_string())?;
    Ok(code)
}

fn cmd_table2(nu: Option<&[f64]>, out_dir: &Path) -> Result<ExitCode, String> {
    use rayon::prelude::*;
    ensure_dir(out_dir)?;
    let nus: Vec<f64> = nu
        .map(|s| s.to_vec())
        .unwrap_or_else(|| EXAMPLE2_NU_VALUES.to_vec());
    let results: Vec<Result<String, String>> = nus
        .par_iter()
        .map(|&nu| {
            let e = delay_control::presets::example2(nu).map_err(|e| e.to_string())?;
            let r = continuation_solve(&e.spec, &e.settings).map_err(|e| e.to_string())?;
            Ok(format!(
                "{nu:e},{:.6e},{:.6},{},{}",
                r.report.f_value,
                r.report.norm_u,
                r.report.support.len(),
                if r.converged { "ok" } else { "flagged" }
            ))
        })
        .collect();
    let mut csv = String::from("nu,F,norm_u,support,status\n");
    let mut code = ExitCode::SUCCESS;
    for r in results {
        match r {
            Ok(line) => {
                println!("{line}");
                csv.push_str(&line);
                csv.push('\n');
            }
            Err(e) => {
                eprintln!("row failed: {e}");
                code = ExitCode::from(2);
            }
        }
    }
    io::write_string(&out_dir.join("table2.csv"), &csv).map_err(|e| e.to_string())?;
    Ok(code)
}

fn _unused(_: &AtomicMeasure, _: &ControlGrid) {}
