//! Exact conversion between max-affine functions and a chain-structured
//! input convex network.
//!
//! The network takes the doubled input `x‡ = [x; -x]` and has `K` scalar
//! layers:
//!
//! ```text
//! y_1     = relu(W_0·x‡ + β_0)
//! y_{i+1} = relu(y_i + W_i·x‡ + β_i)        i = 1..K-1
//! ```
//!
//! with every `W_i ≥ 0`. Writing `w_i = W_i[..d] - W_i[d..]`, the network
//! computes `relu(max_k α_k·x + c_k)` where `α_k = Σ_{j≥k} w_j` and
//! `c_k = Σ_{j≥k} β_j` (0-based). Shifts enter additively.

use super::max_affine::{check_bounds, MaxAffineFn};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IcnnParams {
    dim: usize,
    /// One `2d` nonnegative weight vector per layer.
    input_weights: Vec<Vec<f64>>,
    shifts: Vec<f64>,
    lipschitz: f64,
    upper_bound: f64,
}

impl IcnnParams {
    /// Builds parameters, checking nonnegativity and the partial-sum slope bound.
    pub fn new(
        dim: usize,
        input_weights: Vec<Vec<f64>>,
        shifts: Vec<f64>,
        lipschitz: f64,
        upper_bound: f64,
    ) -> Result<Self> {
        let p = Self { dim, input_weights, shifts, lipschitz, upper_bound };
        p.validate()?;
        Ok(p)
    }

    pub fn layers(&self) -> usize {
        self.shifts.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_weights(&self, layer: usize) -> &[f64] {
        &self.input_weights[layer]
    }

    pub fn shift(&self, layer: usize) -> f64 {
        self.shifts[layer]
    }

    /// Weight on the previous hidden unit: 0 for the first layer, 1 after.
    pub fn pass_through_weight(&self, layer: usize) -> f64 {
        if layer == 0 {
            0.0
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_bounds(self.lipschitz, self.upper_bound)?;
        if self.shifts.is_empty() || self.input_weights.len() != self.shifts.len() {
            return Err(Error::InvariantViolation(format!(
                "{} weight vectors for {} shifts",
                self.input_weights.len(),
                self.shifts.len()
            )));
        }
        for (i, w) in self.input_weights.iter().enumerate() {
            if w.len() != 2 * self.dim {
                return Err(Error::DimensionMismatch { expected: 2 * self.dim, got: w.len() });
            }
            if let Some(v) = w.iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::InvariantViolation(format!("layer {i} has negative input weight {v}")));
            }
        }
        let mut partial = vec![0.0; self.dim];
        for i in (0..self.layers()).rev() {
            for (p, w) in partial.iter_mut().zip(self.net_weight(i)) {
                *p += w;
            }
            if let Some(v) = partial.iter().find(|v| !(v.abs() <= self.lipschitz)) {
                return Err(Error::InvariantViolation(format!(
                    "partial weight sum {v} at layer {i} exceeds Lipschitz bound {}",
                    self.lipschitz
                )));
            }
        }
        Ok(())
    }

    /// `w_{i,1} - w_{i,2}`.
    fn net_weight(&self, layer: usize) -> impl Iterator<Item = f64> + '_ {
        let w = &self.input_weights[layer];
        w[..self.dim].iter().zip(&w[self.dim..]).map(|(a, b)| a - b)
    }

    /// Forward pass on the doubled input.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut y = 0.0;
        for (i, (w, beta)) in self.input_weights.iter().zip(&self.shifts).enumerate() {
            let (pos, neg) = w.split_at(self.dim);
            let wx: f64 =
                pos.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - neg.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
            y = (self.pass_through_weight(i) * y + wx + beta).max(0.0);
        }
        Ok(y)
    }
}

/// Network parameters whose output equals `max(0, f(x))` everywhere.
pub fn max_affine_to_icnn(f: &MaxAffineFn) -> IcnnParams {
    let d = f.dim();
    let k = f.num_pieces();
    let split = |w: Vec<f64>| -> Vec<f64> {
        let pos = w.iter().map(|v| v.max(0.0));
        let neg = w.iter().map(|v| (-v).max(0.0));
        pos.chain(neg).collect()
    };
    let mut input_weights = Vec::with_capacity(k);
    let mut shifts = Vec::with_capacity(k);
    for i in 0..k - 1 {
        let w: Vec<f64> = f.slope(i).iter().zip(f.slope(i + 1)).map(|(a, b)| a - b).collect();
        input_weights.push(split(w));
        shifts.push(f.intercept(i) - f.intercept(i + 1));
    }
    input_weights.push(split(f.slope(k - 1).to_vec()));
    shifts.push(f.intercept(k - 1));
    IcnnParams { dim: d, input_weights, shifts, lipschitz: f.lipschitz(), upper_bound: f.upper_bound() }
}

/// The max-affine function represented by a network: the `K` telescoped
/// pieces followed by the zero piece contributed by the final rectifier.
pub fn icnn_to_max_affine(p: &IcnnParams) -> Result<MaxAffineFn> {
    p.validate()?;
    let d = p.dim;
    let k = p.layers();
    let mut slopes = vec![0.0; (k + 1) * d];
    let mut intercepts = vec![0.0; k + 1];
    let mut alpha = vec![0.0; d];
    let mut c = 0.0;
    for i in (0..k).rev() {
        for (a, w) in alpha.iter_mut().zip(p.net_weight(i)) {
            *a += w;
        }
        c += p.shifts[i];
        slopes[i * d..(i + 1) * d].copy_from_slice(&alpha);
        intercepts[i] = c;
    }
    Ok(MaxAffineFn::from_parts(d, slopes, intercepts, p.lipschitz, p.upper_bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fn(rng: &mut ChaCha8Rng, d: usize, k: usize) -> MaxAffineFn {
        let pieces =
            (0..k).map(|_| ((0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(), rng.gen_range(-1.0..1.0))).collect();
        MaxAffineFn::new(d, pieces, 2.0, 10.0).unwrap()
    }

    #[test]
    fn single_layer_is_rectified_affine() {
        let f = MaxAffineFn::new(1, vec![(vec![1.0], -0.2)], 1.0, 1.0).unwrap();
        let p = max_affine_to_icnn(&f);
        assert_eq!(p.layers(), 1);
        assert!((p.eval(&[0.5]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(p.eval(&[0.1]).unwrap(), 0.0);
    }

    #[test]
    fn random_three_piece_network_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_fn(&mut rng, 2, 3);
        let p = max_affine_to_icnn(&f);
        p.validate().unwrap();
        for _ in 0..1000 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let gap = (p.eval(&x).unwrap() - f.value(&x).max(0.0)).abs();
            assert!(gap <= 1e-10, "gap {gap}");
        }
    }

    #[test]
    fn negative_function_gives_zero_network() {
        let f = MaxAffineFn::new(1, vec![(vec![0.5], -3.0), (vec![-0.5], -3.0)], 1.0, 1.0).unwrap();
        let p = max_affine_to_icnn(&f);
        for i in 0..=20 {
            assert_eq!(p.eval(&[-2.0 + 0.2 * i as f64]).unwrap(), 0.0);
        }
    }

    #[test]
    fn k1_round_trip_keeps_parameters() {
        let f = MaxAffineFn::new(2, vec![(vec![0.25, -1.5], 0.75)], 2.0, 3.0).unwrap();
        let g = icnn_to_max_affine(&max_affine_to_icnn(&f)).unwrap();
        assert_eq!(g.slope(0), f.slope(0));
        assert_eq!(g.intercept(0), f.intercept(0));
        // trailing rectifier piece
        assert_eq!(g.slope(1), &[0.0, 0.0]);
        assert_eq!(g.intercept(1), 0.0);
    }

    #[test]
    fn k4_round_trip_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_fn(&mut rng, 3, 4);
        let g = icnn_to_max_affine(&max_affine_to_icnn(&f)).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert!((g.value(&x) - f.value(&x).max(0.0)).abs() <= 1e-10);
            assert!(g.slopes().iter().all(|a| a.abs() <= g.lipschitz()));
        }
    }

    #[test]
    fn zero_parameters_give_zero_function() {
        let p = IcnnParams::new(2, vec![vec![0.0; 4]; 3], vec![0.0; 3], 1.0, 1.0).unwrap();
        let g = icnn_to_max_affine(&p).unwrap();
        for x in [[0.0, 0.0], [1.0, -3.0], [-7.0, 2.0]] {
            assert_eq!(g.value(&x), 0.0);
            assert_eq!(p.eval(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn negative_weights_are_rejected() {
        let err = IcnnParams::new(1, vec![vec![0.5, -0.1]], vec![0.0], 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvariantViolation(_)));
    }

    #[test]
    fn partial_sums_bound_is_checked() {
        // two layers of net weight 0.8 each: first piece slope 1.6 > L = 1
        let err = IcnnParams::new(1, vec![vec![0.8, 0.0], vec![0.8, 0.0]], vec![0.0, 0.0], 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvariantViolation(_)));
    }
}
