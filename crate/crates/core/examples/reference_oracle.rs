//! Computes the grid-model equilibrium of the default Aiyagari economy from
//! the three lower/upper corners of the price box.

use std::time::Instant;

use mfgham::economy::{Aiyagari, AiyagariConfig, Economy};
use mfgham::equilibrium::{reference_equilibrium, OracleConfig};

fn main() -> mfgham::Result<()> {
    let env = Aiyagari::new(AiyagariConfig::default())?;
    let corners = env.mean_field_box().corners();
    for start in &corners[..3] {
        let clock = Instant::now();
        let cfg = OracleConfig { initial: *start, ..Default::default() };
        let out = reference_equilibrium(&env, &cfg)?;
        println!(
            "from ({:.2}, {:.2}): wage={:.9} rent={:.9} K={:.6} N={:.6} in {} rounds ({:.1}s)",
            start.wage,
            start.rent,
            out.z.wage,
            out.z.rent,
            out.aggregates.capital,
            out.aggregates.labor,
            out.rounds,
            clock.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
