//! Converts a max-affine function to the input-convex network computing
//! `max(0, f)` and back, checking that all three agree pointwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfgham::shape_reg::{icnn_to_max_affine, max_affine_to_icnn, MaxAffineFn};

fn main() -> mfgham::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pieces: Vec<(Vec<f64>, f64)> =
        (0..5).map(|_| (vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], rng.gen_range(-0.5..0.5))).collect();
    let f = MaxAffineFn::new(2, pieces, 1.0, 4.0)?;
    let net = max_affine_to_icnn(&f);
    let back = icnn_to_max_affine(&net)?;
    println!("{} pieces -> {} layers -> {} pieces", f.num_pieces(), net.layers(), back.num_pieces());

    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let v = f.value(&x).max(0.0);
        worst = worst.max((net.eval(&x)? - v).abs()).max((back.value(&x) - v).abs());
    }
    println!("largest disagreement over 1000 probes: {worst:.2e}");
    print!("{}", back.to_text());
    Ok(())
}
