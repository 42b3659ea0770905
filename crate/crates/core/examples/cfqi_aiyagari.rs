//! Runs concave fitted Q-iteration on one Aiyagari dataset and compares the
//! fitted Q with the grid value-iteration Q at the same prices.
//!
//! Usage: `cargo run --release --example cfqi_aiyagari -- [M] [seed]`

use mfgham::cfqi::{cfqi_for, CfqiConfig};
use mfgham::economy::{Aiyagari, AiyagariConfig, Economy, MeanFieldTerm};
use mfgham::equilibrium::{grid_q, OracleConfig};
use mfgham::mdp::{ActionValue, HouseholdState};

fn main() -> mfgham::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let m = args.first().copied().unwrap_or(1000) as usize;
    let seed = args.get(1).copied().unwrap_or(0);

    let env = Aiyagari::new(AiyagariConfig::default())?;
    let z = MeanFieldTerm::new(0.71, 0.30);
    let data = env.sample_dataset(&z, m, seed);
    let cfg = CfqiConfig { discount: env.discount(), seed, ..CfqiConfig::default() };
    let out = cfqi_for(&env, &data, &cfg)?;
    println!("M = {m}, τ = {}, final mean risk {:.3e}", out.iterations, out.final_risk());

    let reference = grid_q(&env, &z, &OracleConfig::default())?;
    let mut worst: f64 = 0.0;
    for level in 0..env.levels() {
        for i in 0..=20 {
            let s = HouseholdState::new(env.capital_max() * i as f64 / 20.0, level);
            let iv = env.feasible(&z, &s);
            for j in 0..=20 {
                let a = iv.lo + iv.width() * j as f64 / 20.0;
                worst = worst.max((out.q.value(&s, a) - reference.value(&s, a)).abs());
            }
        }
    }
    println!("sup |Q_cfqi - Q_grid| on probes: {worst:.4} (B = {:.1})", env.q_bound());
    Ok(())
}
