use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use mfgham::equilibrium::{contraction_diagnostics, reference_equilibrium, solve};
use mfgham::experiment::{fit_bench, run_experiment, write_csv_rows, write_oracle, Config, ExperimentPlan};
use mfgham::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mfgham", version, about = "Mean-field equilibria of heterogeneous-agent economies")]
struct Cli {
    /// Flat TOML config; keys as printed by --print-config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value = "mfgham-out")]
    out: PathBuf,
    /// Comma-separated sample sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    m_list: Option<Vec<usize>>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    rounds: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One equilibrium solve; writes trajectory.csv.
    Solve {
        /// Dataset size per round (defaults to `samples` from the config).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Sample-size sweep with error statistics, rate fit and plot.
    Experiment,
    /// Grid reference equilibrium.
    Oracle,
    /// Max-affine regression benchmarks on a synthetic convex target.
    FitBench {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MFGHAM_LOG", "info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::IterationDiverged { .. } | Error::OracleNoConvergence { .. } => 3,
        _ => 1,
    }
}

fn effective_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let s = &mut cfg.solver;
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    if let Some(v) = cli.jobs {
        s.jobs = v;
    }
    if let Some(v) = &cli.m_list {
        s.m_list = v.clone();
    }
    if let Some(v) = cli.trials {
        s.trials = v;
    }
    if let Some(v) = cli.rounds {
        s.rounds = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Error::Config("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Solve { samples } => {
            let env = cfg.economy()?;
            let m = samples.unwrap_or(cfg.solver.samples);
            if m == 0 {
                return Err(Error::Config("samples must be >= 1".into()));
            }
            let result = solve(&env, &cfg.solve(m, cfg.solver.seed))?;
            ensure_dir(&cli.out)?;
            let path = cli.out.join("trajectory.csv");
            result.write_csv(fs::File::create(&path)?)?;
            let z = result.last();
            println!("t\twage\trent\tdelta_l1");
            for row in result.rows() {
                println!(
                    "{}\t{:.6}\t{:.6}\t{}",
                    row.t,
                    row.wage,
                    row.rent,
                    row.delta_l1.map_or("-".into(), |d| format!("{d:.3e}"))
                );
            }
            if let Ok(report) = contraction_diagnostics(&result.trajectory) {
                println!("geometric-mean contraction ratio {:.3}", report.geometric_mean);
            }
            println!("z^T = ({:.6}, {:.6}); trajectory written to {}", z.wage, z.rent, path.display());
        }
        Command::Experiment => {
            let plan = ExperimentPlan::from_config(&cfg, &cli.out);
            let summary = run_experiment(&cfg, &plan)?;
            println!("reference z* = ({:.6}, {:.6})", summary.reference.wage, summary.reference.rent);
            println!("M\ttrials\tmean\tsd");
            for a in &summary.aggregate {
                println!("{}\t{}\t{:.4e}\t{:.4e}", a.m, a.trials, a.mean_error, a.sd_error);
            }
            println!(
                "fitted slope {:.3} (r² {:.3}); outputs in {}",
                summary.rate.slope,
                summary.rate.r_squared,
                plan.out_dir.display()
            );
        }
        Command::Oracle => {
            let env = cfg.economy()?;
            let out = reference_equilibrium(&env, &cfg.oracle())?;
            ensure_dir(&cli.out)?;
            write_oracle(&cli.out.join("oracle.csv"), &out.z)?;
            println!(
                "z* = ({:.9}, {:.9})  K = {:.6}  N = {:.6}  rounds = {}",
                out.z.wage, out.z.rent, out.aggregates.capital, out.aggregates.labor, out.rounds
            );
        }
        Command::FitBench { dim, noise } => {
            if *dim == 0 || !(noise.is_finite() && *noise >= 0.0) {
                return Err(Error::Config("fit-bench needs dim >= 1 and a finite noise >= 0".into()));
            }
            ensure_dir(&cli.out)?;
            let runs = fit_bench(&cfg.solver.m_list, *dim, *noise, cfg.solver.seed)?;
            println!("M\tpieces\tseconds\trisk\ttest_rmse");
            for (row, model) in &runs {
                fs::write(cli.out.join(format!("fit_m{}.maxaffine", row.m)), model.to_text())?;
                println!("{}\t{}\t{:.4}\t{:.4e}\t{:.4e}", row.m, row.pieces, row.seconds, row.risk, row.test_rmse);
            }
            let rows: Vec<_> = runs.iter().map(|(r, _)| *r).collect();
            write_csv_rows(&cli.out.join("fit_bench.csv"), &rows)?;
            info!("models and fit_bench.csv written to {}", cli.out.display());
        }
    }
    Ok(())
}
