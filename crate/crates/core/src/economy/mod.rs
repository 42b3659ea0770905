//! Household/firm environment: market conditions, income risk, budget sets,
//! the population aggregator Ψ and the firm's pricing map Φ.

mod aiyagari;

pub use aiyagari::{Aiyagari, AiyagariConfig};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{Dataset, Feasibility, FeasibleInterval, HouseholdState, TransitionSample};
use crate::policy::Policy;

/// Market conditions `z = (wage ω, rent ς)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldTerm {
    pub wage: f64,
    pub rent: f64,
}

impl MeanFieldTerm {
    pub fn new(wage: f64, rent: f64) -> Self {
        Self { wage, rent }
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        (self.wage - other.wage).abs() + (self.rent - other.rent).abs()
    }
}

/// Rectangle `[ω_min, ω_max] × [ς_min, ς_max]` of admissible mean-field terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldBox {
    pub wage: (f64, f64),
    pub rent: (f64, f64),
}

impl MeanFieldBox {
    pub fn contains(&self, z: &MeanFieldTerm) -> bool {
        (self.wage.0..=self.wage.1).contains(&z.wage) && (self.rent.0..=self.rent.1).contains(&z.rent)
    }

    pub fn clamp(&self, z: MeanFieldTerm) -> MeanFieldTerm {
        MeanFieldTerm::new(z.wage.clamp(self.wage.0, self.wage.1), z.rent.clamp(self.rent.0, self.rent.1))
    }

    /// ℓ1 distance from `z` to the box.
    pub fn excess(&self, z: &MeanFieldTerm) -> f64 {
        z.l1_distance(&self.clamp(*z))
    }

    /// ℓ1 width `(ω_max - ω_min) + (ς_max - ς_min)`.
    pub fn width(&self) -> f64 {
        (self.wage.1 - self.wage.0) + (self.rent.1 - self.rent.0)
    }

    /// The four corners, lower-left first, counter-clockwise.
    pub fn corners(&self) -> [MeanFieldTerm; 4] {
        [
            MeanFieldTerm::new(self.wage.0, self.rent.0),
            MeanFieldTerm::new(self.wage.1, self.rent.0),
            MeanFieldTerm::new(self.wage.1, self.rent.1),
            MeanFieldTerm::new(self.wage.0, self.rent.1),
        ]
    }
}

/// Population capital `K̄` and labor `N̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateIndicators {
    pub capital: f64,
    pub labor: f64,
}

/// Markov chain over income levels; rows are `P[w' | w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomeChain {
    rows: Vec<Vec<f64>>,
}

impl IncomeChain {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Config("income chain has no states".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!("chain row {i} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::Config(format!("chain row {i} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("chain row {i} sums to {total}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.rows[from][to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.rows[from]
    }

    /// Draws `w'` from row `w`.
    pub fn step<R: Rng + ?Sized>(&self, w: usize, rng: &mut R) -> usize {
        draw_categorical(&self.rows[w], rng.gen::<f64>())
    }

    /// Stationary distribution by power iteration from uniform.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.len();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..100_000 {
            let mut next = vec![0.0; n];
            for (i, p) in pi.iter().enumerate() {
                for (j, q) in self.rows[i].iter().enumerate() {
                    next[j] += p * q;
                }
            }
            let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if diff < 1e-15 {
                break;
            }
        }
        pi
    }
}

fn draw_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding slack above the last cumulative sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Budget set under given prices: savings `a ∈ [0, min(b_max, R b + ω n - ε_c)]`
/// with gross return `R = 1 + ς - δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSet {
    pub gross_return: f64,
    pub wage: f64,
    pub labor: Vec<f64>,
    pub capital_max: f64,
    pub consumption_floor: f64,
}

impl BudgetSet {
    /// Cash on hand `R b + ω n`.
    #[inline]
    pub fn resources(&self, s: &HouseholdState) -> f64 {
        self.gross_return * s.capital + self.wage * self.labor[s.level]
    }
}

impl Feasibility for BudgetSet {
    #[inline]
    fn interval(&self, s: &HouseholdState) -> FeasibleInterval {
        let hi = (self.resources(s) - self.consumption_floor).min(self.capital_max).max(0.0);
        FeasibleInterval { lo: 0.0, hi }
    }
}

/// Monte-Carlo settings of the population aggregator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationSettings {
    pub population: usize,
    pub horizon: usize,
    pub burn_in: usize,
}

/// A heterogeneous-agent economy with discrete income levels.
pub trait Economy: Sync {
    fn levels(&self) -> usize;
    fn labor(&self, level: usize) -> f64;
    fn capital_max(&self) -> f64;
    fn chain(&self) -> &IncomeChain;
    fn discount(&self) -> f64;
    /// Entropy regularization strength `ζ`.
    fn regularization(&self) -> f64;
    fn mean_field_box(&self) -> MeanFieldBox;
    fn aggregation(&self) -> AggregationSettings;
    /// Feasibility under `z`.
    fn budget(&self, z: &MeanFieldTerm) -> BudgetSet;
    /// Reward in `[0, 1]` for a feasible action.
    fn reward_unchecked(&self, z: &MeanFieldTerm, s: &HouseholdState, a: f64) -> f64;
    /// Lipschitz constant of the reward in `ℓ∞` over `(b, a)`.
    fn reward_lipschitz(&self) -> f64;
    /// Competitive factor prices before clamping into the box.
    fn firm_prices(&self, xi: &AggregateIndicators) -> MeanFieldTerm;

    fn feasible(&self, z: &MeanFieldTerm, s: &HouseholdState) -> FeasibleInterval {
        self.budget(z).interval(s)
    }

    fn reward(&self, z: &MeanFieldTerm, s: &HouseholdState, a: f64) -> Result<f64> {
        let iv = self.feasible(z, s);
        let slack = 1e-12 * (1.0 + iv.hi.abs());
        if !(a >= iv.lo - slack && a <= iv.hi + slack) {
            return Err(Error::InfeasibleAction { action: a, max: iv.hi });
        }
        Ok(self.reward_unchecked(z, s, a))
    }

    /// `Φ`: firm prices clamped into the mean-field box.
    fn production_phi(&self, xi: &AggregateIndicators) -> MeanFieldTerm {
        self.mean_field_box().clamp(self.firm_prices(xi))
    }

    /// `B = 1 / (1 - γ)`.
    fn q_bound(&self) -> f64 {
        1.0 / (1.0 - self.discount())
    }

    /// `L = L_r / (1 - γ)`.
    fn q_lipschitz(&self) -> f64 {
        self.reward_lipschitz() / (1.0 - self.discount())
    }

    fn income_step<R: Rng + ?Sized>(&self, w: usize, rng: &mut R) -> usize {
        self.chain().step(w, rng)
    }

    /// `m` i.i.d. transitions: `b ~ U[0, b_max]`, level uniform, `a` uniform
    /// on `Γ_z(s)`, next state `(a, w')`.
    fn sample_dataset(&self, z: &MeanFieldTerm, m: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = self.budget(z);
        let samples = (0..m)
            .map(|_| {
                let state = HouseholdState::new(rng.gen::<f64>() * self.capital_max(), rng.gen_range(0..self.levels()));
                let iv = budget.interval(&state);
                let action = iv.lo + rng.gen::<f64>() * iv.width();
                let reward = self.reward_unchecked(z, &state, action);
                let next_state = HouseholdState::new(action, self.income_step(state.level, &mut rng));
                TransitionSample { state, action, reward, next_state }
            })
            .collect();
        Dataset { mean_field: *z, samples, seed }
    }

    /// `Ψ(z, π)`: simulate the population under `π` and average capital and
    /// labor over households and post-burn-in periods.
    ///
    /// Households start at `b ~ U[0, b_max]` with levels drawn from the
    /// chain's stationary distribution; each household has its own RNG
    /// stream, so results do not depend on scheduling.
    fn aggregate_psi<P: Policy>(&self, _z: &MeanFieldTerm, policy: &P, seed: u64) -> Result<AggregateIndicators> {
        let cfg = self.aggregation();
        let recorded = cfg.horizon.saturating_sub(cfg.burn_in);
        if cfg.population == 0 || recorded == 0 {
            return Err(Error::Config("aggregation needs population >= 1 and horizon > burn_in".into()));
        }
        let stationary = self.chain().stationary();
        const BLOCK: usize = 256;
        let blocks = cfg.population.div_ceil(BLOCK);
        let sums: Vec<(f64, f64)> = (0..blocks)
            .into_par_iter()
            .map(|blk| -> Result<(f64, f64)> {
                let mut sum_b = 0.0;
                let mut sum_n = 0.0;
                for h in blk * BLOCK..((blk + 1) * BLOCK).min(cfg.population) {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(h as u64);
                    let mut s = HouseholdState::new(
                        rng.gen::<f64>() * self.capital_max(),
                        draw_categorical(&stationary, rng.gen::<f64>()),
                    );
                    for t in 0..cfg.horizon {
                        if t >= cfg.burn_in {
                            sum_b += s.capital;
                            sum_n += self.labor(s.level);
                        }
                        if t + 1 == cfg.horizon {
                            break;
                        }
                        let a = policy.sample(&s, &mut rng)?;
                        s = HouseholdState::new(a, self.income_step(s.level, &mut rng));
                    }
                }
                Ok((sum_b, sum_n))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = (cfg.population * recorded) as f64;
        let (kb, nb) = sums.iter().fold((0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1));
        Ok(AggregateIndicators { capital: kb / n, labor: nb / n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_validation() {
        assert!(IncomeChain::new(vec![vec![0.5, 0.5], vec![0.2, 0.8]]).is_ok());
        assert!(IncomeChain::new(vec![vec![0.5, 0.6], vec![0.2, 0.8]]).is_err());
        assert!(IncomeChain::new(vec![vec![1.5, -0.5], vec![0.2, 0.8]]).is_err());
        assert!(IncomeChain::new(vec![vec![1.0]; 2]).is_err());
    }

    #[test]
    fn stationary_of_asymmetric_chain() {
        let c = IncomeChain::new(vec![vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
        let pi = c.stationary();
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn box_clamp_and_excess() {
        let b = MeanFieldBox { wage: (0.0, 1.0), rent: (0.0, 1.0) };
        let z = MeanFieldTerm::new(1.5, -0.25);
        assert_eq!(b.clamp(z), MeanFieldTerm::new(1.0, 0.0));
        assert!((b.excess(&z) - 0.75).abs() < 1e-15);
        assert!(!b.contains(&z));
        assert_eq!(b.width(), 2.0);
    }
}
