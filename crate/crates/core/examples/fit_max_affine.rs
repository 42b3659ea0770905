//! Fits a max-affine function to noisy samples of a convex surface and
//! compares it with the best single affine fit.
//!
//! Usage: `cargo run --release --example fit_max_affine -- [M] [seed]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfgham::shape_reg::{fit_affine_ols, fit_max_affine, select_piece_count, RegressionProblem};

fn main() -> mfgham::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let m = args.first().copied().unwrap_or(2000) as usize;
    let seed = args.get(1).copied().unwrap_or(7);

    let target = |x: &[f64]| (x[0] - 0.2).powi(2) + 0.5 * x[1].abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let ys: Vec<f64> = rows.iter().map(|x| target(x) + 0.05 * (rng.gen::<f64>() - 0.5)).collect();

    let k = select_piece_count(m, 2, 64);
    let problem = RegressionProblem::from_rows(&rows, ys, k, 3.0, 5.0)?.with_seed(seed);
    let fit = fit_max_affine(&problem)?;
    let affine = fit_affine_ols(&problem)?;

    println!("M = {m}, K = {k}, pieces kept = {}", fit.function.num_pieces());
    println!("training risk: max-affine {:.3e}, affine {:.3e}", fit.risk, problem.sse(&affine) / m as f64);
    println!("restart SSEs: {:?}", fit.restart_sse.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    let probes = [[0.2, 0.0], [-0.8, 0.5], [0.9, -0.9]];
    for x in probes {
        println!("f({:>5.2}, {:>5.2}) = {:.4}   target {:.4}", x[0], x[1], fit.function.value(&x), target(&x));
    }
    Ok(())
}
