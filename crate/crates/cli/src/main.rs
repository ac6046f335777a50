//! `mmg-ems` — run the multi-microgrid dispatch solvers from the shell.
//!
//! Exit codes: 0 success, 1 solver or infeasibility failure, 2 usage error
//! (bad flags, unknown case, unreadable case file). Set `EMS_LOG` (e.g.
//! `EMS_LOG=debug`) to control verbosity; validation warnings print at the
//! default level.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmg_ems::centralized::{
    cooperative_cost_attribution, solve_individual, solve_modified_centralized,
    solve_original_centralized,
};
use mmg_ems::distributed::run_distributed;
use mmg_ems::model::{CaseConfig, DispatchSolution};
use mmg_ems::scenarios::{builtin_case, load_case, BUILTIN_NAMES};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mmg-ems", version, about = "Multi-microgrid energy management simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one case with one solver mode.
    Solve(SolveArgs),
    /// Run original, modified, and distributed solvers and tabulate them.
    Compare(CompareArgs),
    /// Compare islanded operation against cooperative dispatch.
    IndividualVsCoop(IndividualArgs),
}

#[derive(Args, Clone)]
struct CaseArgs {
    /// Built-in case name (base | stressed | individual_vs_coop) or a path
    /// to a case file.
    #[arg(long)]
    case: String,
    /// Override the subgradient step size.
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the transfer-cost scaling.
    #[arg(long)]
    beta: Option<f64>,
    /// Override the iteration budget; 0 evaluates the initial prices only
    /// (one round, no update).
    #[arg(long)]
    iters: Option<usize>,
    /// Stop when the relative duality gap falls below this fraction.
    #[arg(long)]
    gap_tol: Option<f64>,
    /// Initial selling prices: a single value for all MGs or one
    /// comma-separated value per MG.
    #[arg(long)]
    lambda0: Option<String>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Solver mode.
    #[arg(long, value_enum)]
    mode: Mode,
    /// Write the per-round convergence trace as CSV (distributed mode).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the machine-readable result (full precision JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IndividualArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Mode {
    Original,
    Modified,
    Distributed,
    Individual,
}

/// Failures mapped to exit codes.
enum CliError {
    /// Bad input: unknown case, unreadable/invalid file, bad overrides.
    Usage(String),
    /// The solver itself failed: infeasible, diverged, numerical trouble.
    Solver(String),
}

impl CliError {
    fn report(self) -> ExitCode {
        match self {
            CliError::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            CliError::Solver(msg) => {
                eprintln!("solver error: {msg}");
                ExitCode::from(1)
            }
        }
    }
}

fn resolve_case(args: &CaseArgs) -> Result<(String, CaseConfig), CliError> {
    let (name, mut case) = if BUILTIN_NAMES
        .iter()
        .any(|n| n.eq_ignore_ascii_case(&args.case.replace('-', "_")))
    {
        let case = builtin_case(&args.case).map_err(|e| CliError::Usage(e.to_string()))?;
        (args.case.clone(), case)
    } else if Path::new(&args.case).exists() {
        let case = load_case(&args.case).map_err(|e| CliError::Usage(e.to_string()))?;
        (args.case.clone(), case)
    } else {
        return Err(CliError::Usage(format!(
            "{:?} is neither a built-in case ({}) nor an existing file",
            args.case,
            BUILTIN_NAMES.join(", ")
        )));
    };

    if let Some(alpha) = args.alpha {
        case.alpha = alpha;
    }
    if let Some(beta) = args.beta {
        case.beta = beta;
    }
    match args.iters {
        Some(0) => {
            // Degenerate budget: report the initial point only.
            case.max_iters = 1;
            case.alpha = 0.0;
        }
        Some(n) => case.max_iters = n,
        None => {}
    }
    if let Some(gap_tol) = args.gap_tol {
        case.gap_tol = Some(gap_tol);
    }
    if let Some(spec) = &args.lambda0 {
        let values: Result<Vec<f64>, _> = spec.split(',').map(|s| s.trim().parse()).collect();
        let values = values.map_err(|e| CliError::Usage(format!("bad --lambda0: {e}")))?;
        case.lambda_init = match values.len() {
            1 => vec![values[0]; case.n_mgs()],
            n if n == case.n_mgs() => values,
            n => {
                return Err(CliError::Usage(format!(
                    "--lambda0 needs 1 or {} values, got {n}",
                    case.n_mgs()
                )))
            }
        };
    }
    case.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((name, case))
}

fn write_output(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {path:?}: {e}")))
}

fn print_dispatch(case: &CaseConfig, d: &DispatchSolution, lambda: Option<&[f64]>) {
    println!("objective [$]          {:.2}", d.objective);
    println!("generation cost [$]    {:.2}", d.gen_cost_total);
    println!("transfer cost [$]      {:.2}", d.transfer_cost_total);
    println!();
    println!(
        "{:<4} {:>10} {:>10} {:>10} {:>10}{}",
        "MG",
        "P [kW]",
        "buy [kW]",
        "sell [kW]",
        "eps [kW]",
        if lambda.is_some() {
            format!(" {:>14}", "lambda [$/kW]")
        } else {
            String::new()
        }
    );
    for m in 0..case.n_mgs() {
        println!(
            "{:<4} {:>10.2} {:>10.2} {:>10.2} {:>10.2}{}",
            m + 1,
            d.gen[m],
            d.grid_buy[m],
            d.grid_sell[m],
            d.eps[m],
            match lambda {
                Some(l) => format!(" {:>14.4}", l[m]),
                None => String::new(),
            }
        );
    }
    let exchanges: Vec<String> = d
        .exchange
        .entries()
        .filter(|(_, _, kw)| kw.abs() > 0.005)
        .map(|(s, b, kw)| format!("e[{}->{}] = {:.2}", s + 1, b + 1, kw))
        .collect();
    if exchanges.is_empty() {
        println!("\nexchanges [kW]: none above 0.005");
    } else {
        println!("\nexchanges [kW]: {}", exchanges.join(", "));
    }
}

fn dispatch_json(case: &CaseConfig, d: &DispatchSolution) -> serde_json::Value {
    let exchanges: Vec<serde_json::Value> = d
        .exchange
        .entries()
        .map(|(s, b, kw)| json!({"seller": s + 1, "buyer": b + 1, "kw": kw}))
        .collect();
    json!({
        "n_mgs": case.n_mgs(),
        "objective": d.objective,
        "gen_cost_total": d.gen_cost_total,
        "transfer_cost_total": d.transfer_cost_total,
        "gen": d.gen,
        "grid_buy": d.grid_buy,
        "grid_sell": d.grid_sell,
        "eps": d.eps,
        "exchanges": exchanges,
    })
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let (name, case) = resolve_case(&args.case)?;
    println!("case: {name} ({} microgrids)", case.n_mgs());
    match args.mode {
        Mode::Original | Mode::Modified => {
            let sol = if args.mode == Mode::Original {
                println!("mode: original centralized (pattern enumeration)\n");
                solve_original_centralized(&case)
            } else {
                println!("mode: modified centralized (quadratic transfer charge)\n");
                solve_modified_centralized(&case)
            }
            .map_err(|e| CliError::Solver(e.to_string()))?;
            print_dispatch(&case, &sol.dispatch, Some(&sol.lambda));
            if let Some(path) = &args.out {
                let mut value = dispatch_json(&case, &sol.dispatch);
                value["lambda"] = json!(sol.lambda);
                write_output(path, &value)?;
            }
        }
        Mode::Distributed => {
            println!("mode: distributed (price coordination)\n");
            let run = run_distributed(&case).map_err(|e| CliError::Solver(e.to_string()))?;
            let last = run.trace.rounds.last().expect("at least one round");
            print_dispatch(&case, &run.dispatch, Some(&run.final_prices.lambda));
            println!();
            println!("rounds completed       {}", run.trace.rounds.len());
            println!("dual objective [$]     {:.2}", last.dual_obj);
            println!(
                "duality gap [$]        {:.4} ({:.4} %)",
                last.gap, last.gap_pct
            );
            if let Some(round) = run.diagnostics.converged_at {
                println!("gap tolerance met at round {round}");
            }
            if !run.diagnostics.negative_price_rounds.is_empty() {
                println!(
                    "note: negative prices in {} round(s) (first at {})",
                    run.diagnostics.negative_price_rounds.len(),
                    run.diagnostics.negative_price_rounds[0]
                );
            }
            if let Some(path) = &args.trace {
                let file = fs::File::create(path)
                    .map_err(|e| CliError::Usage(format!("cannot create {path:?}: {e}")))?;
                run.trace
                    .write_csv(file)
                    .map_err(|e| CliError::Solver(format!("writing trace: {e}")))?;
                println!("trace written to {}", path.display());
            }
            if let Some(path) = &args.out {
                let mut value = dispatch_json(&case, &run.dispatch);
                value["lambda"] = json!(run.final_prices.lambda);
                value["rounds"] = json!(run.trace.rounds.len());
                value["dual_obj"] = json!(last.dual_obj);
                value["gap"] = json!(last.gap);
                value["gap_pct"] = json!(last.gap_pct);
                write_output(path, &value)?;
            }
        }
        Mode::Individual => {
            println!("mode: individual (no exchanges, no grid trade)\n");
            let out = solve_individual(&case).map_err(|e| CliError::Solver(e.to_string()))?;
            for (m, cost) in out.per_mg_cost.iter().enumerate() {
                println!("MG{} cost [$]   {:>12.2}", m + 1, cost);
            }
            println!("total [$]      {:>12.2}", out.total);
            if let Some(path) = &args.out {
                write_output(
                    path,
                    &json!({"per_mg_cost": out.per_mg_cost, "total": out.total}),
                )?;
            }
        }
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let (name, case) = resolve_case(&args.case)?;
    let mut failures = Vec::new();
    let original = solve_original_centralized(&case)
        .map_err(|e| failures.push(("original".to_owned(), e.to_string())))
        .ok();
    let modified = solve_modified_centralized(&case)
        .map_err(|e| failures.push(("modified".to_owned(), e.to_string())))
        .ok();
    let distributed = run_distributed(&case)
        .map_err(|e| failures.push(("distributed".to_owned(), e.to_string())))
        .ok();
    let any_failed = !failures.is_empty();
    let report = report::build_comparison(
        &name,
        &case,
        original.as_ref(),
        modified.as_ref(),
        distributed.as_ref(),
        failures,
    );
    print!("{}", report::render_comparison(&report));
    if let Some(path) = &args.out {
        write_output(
            path,
            &serde_json::to_value(&report).expect("report serializes"),
        )?;
    }
    if any_failed {
        return Err(CliError::Solver("one or more modes failed".to_owned()));
    }
    Ok(())
}

fn cmd_individual_vs_coop(args: IndividualArgs) -> Result<(), CliError> {
    let (name, case) = resolve_case(&args.case)?;
    let individual = solve_individual(&case).map_err(|e| CliError::Solver(e.to_string()))?;
    let cooperative =
        solve_modified_centralized(&case).map_err(|e| CliError::Solver(e.to_string()))?;
    let per_mg = cooperative_cost_attribution(&case, &cooperative);
    let report = report::build_individual_vs_coop(
        &name,
        &individual,
        cooperative.dispatch.objective,
        &per_mg,
    );
    print!("{}", report::render_individual_vs_coop(&report));
    if let Some(path) = &args.out {
        write_output(
            path,
            &serde_json::to_value(&report).expect("report serializes"),
        )?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter("EMS_LOG")
            .default_filter_or("warn"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Compare(args) => cmd_compare(args),
        Command::IndividualVsCoop(args) => cmd_individual_vs_coop(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
