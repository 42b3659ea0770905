//! Runs the mean-field loop on the default Aiyagari economy and prints the
//! price path with per-round diagnostics.
//!
//! Usage: `cargo run --release --example solve_equilibrium -- [M] [T] [seed]`

use mfgham::economy::{Aiyagari, AiyagariConfig};
use mfgham::equilibrium::{contraction_diagnostics, solve, SolveConfig};

fn main() -> mfgham::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MFGHAM_LOG", "info")).init();
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let samples = args.first().copied().unwrap_or(1000) as usize;
    let rounds = args.get(1).copied().unwrap_or(15) as usize;
    let seed = args.get(2).copied().unwrap_or(0);

    let env = Aiyagari::new(AiyagariConfig::default())?;
    let cfg = SolveConfig { samples, rounds, seed, ..Default::default() };
    let out = solve(&env, &cfg)?;
    println!("t      wage       rent      Δℓ1       K̄        risk      τ     s");
    for (t, z) in out.trajectory.iter().enumerate() {
        match t.checked_sub(1).map(|i| &out.rounds[i]) {
            None => println!("{t:>2} {:>10.6} {:>10.6}", z.wage, z.rent),
            Some(d) => println!(
                "{t:>2} {:>10.6} {:>10.6} {:>9.2e} {:>8.4} {:>9.2e} {:>4} {:>6.2}",
                z.wage, z.rent, d.delta_l1, d.psi.capital, d.cfqi_mean_risk, d.cfqi_iterations, d.seconds
            ),
        }
    }
    if let Ok(rep) = contraction_diagnostics(&out.trajectory) {
        println!("geometric-mean increment ratio: {:.3}", rep.geometric_mean);
    }
    Ok(())
}
