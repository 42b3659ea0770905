//! Small sample-size sweep: several solves per `M`, errors against the grid
//! oracle, and the fitted log-log rate. Writes CSVs and an SVG plot.
//!
//! Usage: `cargo run --release --example rate_sweep -- [trials] [out_dir]`

use mfgham::experiment::{run_experiment, Config, ExperimentPlan};

fn main() -> mfgham::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MFGHAM_LOG", "info")).init();
    let mut args = std::env::args().skip(1);
    let trials = args.next().and_then(|a| a.parse().ok()).unwrap_or(2);
    let out = args.next().unwrap_or_else(|| "rate-sweep-out".into());

    let mut cfg = Config::default();
    cfg.solver.m_list = vec![250, 1000];
    cfg.solver.rounds = 8;
    cfg.solver.trials = trials;
    let plan = ExperimentPlan::from_config(&cfg, out);
    let summary = run_experiment(&cfg, &plan)?;
    for row in &summary.aggregate {
        println!("M = {:>5}: mean error {:.4e} ± {:.1e}", row.m, row.mean_error, row.sd_error);
    }
    println!("slope {:.3}, plot at {}", summary.rate.slope, plan.out_dir.join("convergence.svg").display());
    Ok(())
}
