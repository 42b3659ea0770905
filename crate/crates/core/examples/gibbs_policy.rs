//! Builds the Gibbs policy of a hand-made concave Q on the Aiyagari budget
//! set and compares the exact law with sampled actions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mfgham::economy::{Aiyagari, AiyagariConfig, Economy, MeanFieldTerm};
use mfgham::mdp::{ConcaveQ, HouseholdState};
use mfgham::policy::{GibbsPolicy, Policy};
use mfgham::shape_reg::MaxAffineFn;

fn main() -> mfgham::Result<()> {
    let env = Aiyagari::new(AiyagariConfig::default())?;
    let z = MeanFieldTerm::new(1.0, 0.1);
    let bound = env.q_bound();
    // Q(b, a) = B - max(0.4 a - 2, 1 - 0.3 a, 0.01 b + 0.1), per level
    let level =
        MaxAffineFn::new(2, vec![(vec![0.0, 0.4], -2.0), (vec![0.0, -0.3], 1.0), (vec![0.01, 0.0], 0.1)], 1.0, bound)?;
    let q = ConcaveQ::per_level(vec![level.clone(), level], bound)?;
    let pi = GibbsPolicy::new(q, env.budget(&z), 1.0)?;

    let s = HouseholdState::new(4.0, 1);
    let iv = env.feasible(&z, &s);
    println!("state b = {}, level = {}, feasible actions [{:.3}, {:.3}]", s.capital, s.level, iv.lo, iv.hi);
    println!("mean action {:.4}, regularized value {:.4}", pi.mean(&s)?, pi.regularized_value(&s)?);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws: Vec<f64> = (0..20_000).map(|_| pi.sample(&s, &mut rng)).collect::<mfgham::Result<_>>()?;
    println!("   a      cdf   empirical");
    for k in 1..=5 {
        let a = iv.lo + iv.width() * k as f64 / 6.0;
        let emp = draws.iter().filter(|d| **d <= a).count() as f64 / draws.len() as f64;
        println!("{a:>6.3}  {:.4}  {emp:.4}", pi.cdf(&s, a)?);
    }
    Ok(())
}
