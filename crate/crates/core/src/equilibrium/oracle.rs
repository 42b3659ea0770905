//! Model-based reference equilibrium on a dense `(b, w, a)` grid.
//!
//! Uses the exact chain matrix and reward formula: value iteration on the
//! grid, Gibbs weights on the action nodes, a linear lottery of next-period
//! capital onto the capital grid, the exact stationary distribution of the
//! resulting chain, then the firm's pricing map.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::economy::{AggregateIndicators, Economy, MeanFieldTerm};
use crate::error::{Error, Result};
use crate::mdp::{ActionValue, Feasibility, HouseholdState};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub capital_points: usize,
    /// Action nodes per state, spread over `Γ(s)`.
    pub action_points: usize,
    /// Sup-norm stopping rule of value iteration.
    pub value_tolerance: f64,
    pub max_value_sweeps: usize,
    /// ℓ1 stopping rule of the outer fixed-point loop.
    pub tolerance: f64,
    pub max_rounds: usize,
    pub initial: MeanFieldTerm,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            capital_points: 400,
            action_points: 400,
            value_tolerance: 1e-10,
            max_value_sweeps: 100_000,
            tolerance: 1e-8,
            max_rounds: 500,
            initial: MeanFieldTerm::new(1.0, 0.1),
        }
    }
}

impl OracleConfig {
    /// Same settings with every grid spacing halved.
    pub fn refined(&self) -> Self {
        Self { capital_points: 2 * self.capital_points - 1, action_points: 2 * self.action_points - 1, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.capital_points < 2 || self.action_points < 2 {
            return Err(Error::Config("oracle grids need at least 2 points".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("oracle needs at least one round".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub z: MeanFieldTerm,
    pub aggregates: AggregateIndicators,
    pub rounds: usize,
    pub last_increment: f64,
    /// `z` after every round, starting from the initial term.
    pub path: Vec<MeanFieldTerm>,
}

/// Fixed point `z* = Φ(Ψ(z*, π_{Q*_z*}))` of the grid model.
pub fn reference_equilibrium<E: Economy>(env: &E, cfg: &OracleConfig) -> Result<OracleOutcome> {
    cfg.validate()?;
    let zbox = env.mean_field_box();
    let mut z = zbox.clamp(cfg.initial);
    let mut path = vec![z];
    let mut warm: Option<Vec<f64>> = None;
    let mut last_increment = f64::INFINITY;
    for round in 1..=cfg.max_rounds {
        let grid = HouseholdGrid::build(env, &z, cfg);
        let values = grid.value_iteration(warm.take(), cfg)?;
        let aggregates = grid.aggregates(env, &values)?;
        let next = env.production_phi(&aggregates);
        last_increment = next.l1_distance(&z);
        debug!("oracle round {round}: wage={:.9} rent={:.9} Δ={:.3e}", next.wage, next.rent, last_increment);
        path.push(next);
        z = next;
        warm = Some(values);
        if last_increment <= cfg.tolerance {
            return Ok(OracleOutcome { z, aggregates, rounds: round, last_increment, path });
        }
    }
    Err(Error::OracleNoConvergence { rounds: cfg.max_rounds, last_increment })
}

/// Optimal Q of the grid model at a fixed `z`: exact reward plus the
/// discounted, linearly interpolated expected grid value.
pub struct GridQ<'a, E: ?Sized> {
    env: &'a E,
    z: MeanFieldTerm,
    discount: f64,
    step: f64,
    /// `E[V(b', w') | w]` at capital node `j`, indexed `j * levels + w`.
    expected: Vec<f64>,
    levels: usize,
    /// Value-iteration sweeps used.
    pub sweeps: usize,
}

impl<E: Economy + ?Sized> GridQ<'_, E> {
    pub fn mean_field(&self) -> MeanFieldTerm {
        self.z
    }

    #[inline]
    fn continuation(&self, level: usize, a: f64) -> f64 {
        let nb = self.expected.len() / self.levels;
        let t = (a / self.step).clamp(0.0, (nb - 1) as f64);
        let i = (t.floor() as usize).min(nb - 2);
        let f = t - i as f64;
        let lo = self.expected[i * self.levels + level];
        let hi = self.expected[(i + 1) * self.levels + level];
        lo + f * (hi - lo)
    }
}

impl<E: Economy + ?Sized> ActionValue for GridQ<'_, E> {
    fn value(&self, s: &HouseholdState, a: f64) -> f64 {
        self.env.reward_unchecked(&self.z, s, a) + self.discount * self.continuation(s.level, a)
    }
}

/// Runs value iteration on the grid at `z` and returns the resulting Q.
pub fn grid_q<'a, E: Economy + ?Sized>(env: &'a E, z: &MeanFieldTerm, cfg: &OracleConfig) -> Result<GridQ<'a, E>> {
    cfg.validate()?;
    let grid = HouseholdGrid::build(env, z, cfg);
    let (values, sweeps) = grid.iterate(None, cfg)?;
    Ok(GridQ {
        env,
        z: *z,
        discount: grid.discount,
        step: grid.step,
        expected: grid.expected(&values),
        levels: grid.levels,
        sweeps,
    })
}

/// Rewards and interpolation weights of every `(b_i, w, a_k)` node.
struct HouseholdGrid {
    nb: usize,
    na: usize,
    levels: usize,
    step: f64,
    discount: f64,
    zeta: f64,
    chain: Vec<Vec<f64>>,
    /// Upper end of `Γ(b_i, w)`, indexed `i * levels + w`.
    upper: Vec<f64>,
    /// Per node, indexed `(i * levels + w) * na + k`.
    reward: Vec<f64>,
    left: Vec<u32>,
    frac: Vec<f64>,
}

impl HouseholdGrid {
    fn build<E: Economy + ?Sized>(env: &E, z: &MeanFieldTerm, cfg: &OracleConfig) -> Self {
        let nb = cfg.capital_points;
        let na = cfg.action_points;
        let levels = env.levels();
        let step = env.capital_max() / (nb - 1) as f64;
        let budget = env.budget(z);
        let states = nb * levels;
        let mut upper = vec![0.0; states];
        let mut reward = vec![0.0; states * na];
        let mut left = vec![0u32; states * na];
        let mut frac = vec![0.0; states * na];
        for i in 0..nb {
            for w in 0..levels {
                let st = i * levels + w;
                let s = HouseholdState::new(step * i as f64, w);
                let hi = budget.interval(&s).hi;
                upper[st] = hi;
                for k in 0..na {
                    let a = hi * k as f64 / (na - 1) as f64;
                    let idx = st * na + k;
                    reward[idx] = env.reward_unchecked(z, &s, a);
                    let t = (a / step).clamp(0.0, (nb - 1) as f64);
                    let j = (t.floor() as usize).min(nb - 2);
                    left[idx] = j as u32;
                    frac[idx] = t - j as f64;
                }
            }
        }
        let chain = (0..levels).map(|w| env.chain().row(w).to_vec()).collect();
        Self {
            nb,
            na,
            levels,
            step,
            discount: env.discount(),
            zeta: env.regularization(),
            chain,
            upper,
            reward,
            left,
            frac,
        }
    }

    /// `E[V(b_j, w') | w]`, indexed `j * levels + w`.
    fn expected(&self, values: &[f64]) -> Vec<f64> {
        let l = self.levels;
        let mut ev = vec![0.0; values.len()];
        for j in 0..self.nb {
            for w in 0..l {
                ev[j * l + w] = (0..l).map(|v| self.chain[w][v] * values[j * l + v]).sum();
            }
        }
        ev
    }

    /// Q at every action node of state `st` given expected values `ev`.
    #[inline]
    fn node_q(&self, ev: &[f64], st: usize, out: &mut [f64]) {
        let w = st % self.levels;
        let l = self.levels;
        for (k, q) in out.iter_mut().enumerate() {
            let idx = st * self.na + k;
            let j = self.left[idx] as usize;
            let lo = ev[j * l + w];
            let hi = ev[(j + 1) * l + w];
            *q = self.reward[idx] + self.discount * (lo + self.frac[idx] * (hi - lo));
        }
    }

    fn iterate(&self, warm: Option<Vec<f64>>, cfg: &OracleConfig) -> Result<(Vec<f64>, usize)> {
        let states = self.nb * self.levels;
        let mut v = warm.filter(|w| w.len() == states).unwrap_or_else(|| vec![0.0; states]);
        for sweep in 1..=cfg.max_value_sweeps {
            let ev = self.expected(&v);
            let next: Vec<f64> = (0..states)
                .into_par_iter()
                .map_init(
                    || vec![0.0; self.na],
                    |buf, st| {
                        self.node_q(&ev, st, buf);
                        buf.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    },
                )
                .collect();
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if diff <= cfg.value_tolerance {
                return Ok((v, sweep));
            }
        }
        Err(Error::InvariantViolation(format!(
            "value iteration did not reach {} in {} sweeps",
            cfg.value_tolerance, cfg.max_value_sweeps
        )))
    }

    fn value_iteration(&self, warm: Option<Vec<f64>>, cfg: &OracleConfig) -> Result<Vec<f64>> {
        self.iterate(warm, cfg).map(|(v, _)| v)
    }

    /// Stationary aggregates under the Gibbs policy of the grid Q.
    fn aggregates<E: Economy + ?Sized>(&self, env: &E, values: &[f64]) -> Result<AggregateIndicators> {
        let l = self.levels;
        let states = self.nb * l;
        let ev = self.expected(values);
        // capital transition kernel row per state: Σ_k π_k · lottery(a_k)
        let kernels: Vec<Vec<f64>> = (0..states)
            .into_par_iter()
            .map(|st| {
                let mut row = vec![0.0; self.nb];
                if self.upper[st] <= 0.0 {
                    row[0] = 1.0;
                    return row;
                }
                let mut q = vec![0.0; self.na];
                self.node_q(&ev, st, &mut q);
                let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                // trapezoid weights on the uniform action nodes
                let mut total = 0.0;
                for (k, qk) in q.iter_mut().enumerate() {
                    let edge = if k == 0 || k == self.na - 1 { 0.5 } else { 1.0 };
                    *qk = edge * ((*qk - top) / self.zeta).exp();
                    total += *qk;
                }
                for (k, p) in q.iter().enumerate() {
                    let idx = st * self.na + k;
                    let j = self.left[idx] as usize;
                    let f = self.frac[idx];
                    let mass = p / total;
                    row[j] += mass * (1.0 - f);
                    row[j + 1] += mass * f;
                }
                row
            })
            .collect();

        // μ' = μ T with T[(i,w),(j,w')] = kernel_{iw}(j) P[w, w']; solve (Tᵀ - I) μ = 0, Σ μ = 1
        let mut a = DMatrix::<f64>::zeros(states, states);
        for (st, row) in kernels.iter().enumerate() {
            let w = st % l;
            for (j, kij) in row.iter().enumerate() {
                if *kij == 0.0 {
                    continue;
                }
                for v in 0..l {
                    a[(j * l + v, st)] += kij * self.chain[w][v];
                }
            }
        }
        for d in 0..states {
            a[(d, d)] -= 1.0;
        }
        for c in 0..states {
            a[(states - 1, c)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(states);
        rhs[states - 1] = 1.0;
        let mu = a.lu().solve(&rhs).ok_or_else(|| Error::InvariantViolation("singular stationary system".into()))?;

        let mut capital = 0.0;
        let mut labor = 0.0;
        for i in 0..self.nb {
            for w in 0..l {
                let m = mu[i * l + w].max(0.0);
                capital += m * self.step * i as f64;
                labor += m * env.labor(w);
            }
        }
        let mass: f64 = mu.iter().map(|m| m.max(0.0)).sum();
        Ok(AggregateIndicators { capital: capital / mass, labor: labor / mass })
    }
}
