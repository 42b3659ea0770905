//! Concave fitted Q-iteration.
//!
//! Starting from `Q ≡ 0`, each round builds sampled Bellman targets on one
//! fixed dataset and regresses `B - target` onto bounded Lipschitz
//! max-affine functions, one per income level (or one joint fit).

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::economy::Economy;
use crate::error::{Error, Result};
use crate::mdp::{bellman_targets, ActionValue, ConcaveQ, Dataset, Feasibility};
use crate::seeds;
use crate::shape_reg::{fit_max_affine, select_piece_count, MaxAffineFn};

/// How many affine pieces each regression uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceCount {
    /// `⌈M^{d/(d+4)}⌉` for the samples of each fit, capped at `k_max`.
    Auto {
        k_max: usize,
    },
    Fixed(usize),
}

impl PieceCount {
    pub fn resolve(&self, samples: usize, dim: usize) -> usize {
        match *self {
            PieceCount::Auto { k_max } => select_piece_count(samples, dim, k_max),
            PieceCount::Fixed(k) => k.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfqiConfig {
    /// Number of rounds `τ`; `None` uses [`default_iteration_count`].
    pub iterations: Option<usize>,
    pub discount: f64,
    pub restarts: usize,
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub pieces: PieceCount,
    /// One fit over `(b, level, a)` instead of one per level over `(b, a)`.
    pub joint: bool,
    /// Seed each regression with the previous round's fit.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for CfqiConfig {
    fn default() -> Self {
        Self {
            iterations: None,
            discount: 0.95,
            restarts: 4,
            tolerance: 1e-10,
            max_sweeps: 50,
            pieces: PieceCount::Auto { k_max: 64 },
            joint: false,
            warm_start: true,
            seed: 0,
        }
    }
}

impl CfqiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == Some(0) {
            return Err(Error::Config("CFQI needs at least one iteration".into()));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(format!("discount must lie in [0, 1), got {}", self.discount)));
        }
        if self.restarts == 0 || self.max_sweeps == 0 {
            return Err(Error::Config("restarts and max_sweeps must be >= 1".into()));
        }
        Ok(())
    }

    /// Input dimension of each regression.
    pub fn fit_dim(&self) -> usize {
        if self.joint {
            3
        } else {
            2
        }
    }

    /// Rounds actually run on a dataset of `samples` transitions.
    pub fn resolved_iterations(&self, samples: usize) -> usize {
        self.iterations.unwrap_or_else(|| default_iteration_count(samples, self.fit_dim(), self.discount))
    }
}

/// Shape of the Q-function class: income levels, bound `B`, slope bound `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QClass {
    pub levels: usize,
    pub bound: f64,
    pub lipschitz: f64,
}

impl QClass {
    pub fn of<E: Economy + ?Sized>(env: &E) -> Self {
        Self { levels: env.levels(), bound: env.q_bound(), lipschitz: env.q_lipschitz() }
    }
}

/// `max(5, ⌈(4 / (d + 4)) · ln M / ln(1/γ)⌉)`.
pub fn default_iteration_count(samples: usize, dim: usize, discount: f64) -> usize {
    let m = samples.max(2) as f64;
    let contraction = (1.0 / discount).ln();
    if !(contraction.is_finite() && contraction > 0.0) {
        return 5;
    }
    let tau = (4.0 / (dim as f64 + 4.0)) * m.ln() / contraction;
    // guard against 76.99999 style round-off on exact integers
    ((tau - 1e-9).ceil() as usize).max(5)
}

/// One row of the per-round diagnostic trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfqiTraceRow {
    pub iter: usize,
    pub level: usize,
    /// Empirical risk (mean squared residual) of the fit.
    pub risk: f64,
    /// Restart dispersion of the fit, the achieved optimization slack.
    pub epsilon: f64,
    /// `sup |Q^ℓ - Q^{ℓ-1}|` over this level's sample points.
    pub sup_delta: f64,
}

#[derive(Debug, Clone)]
pub struct CfqiOutcome {
    pub q: ConcaveQ,
    pub iterations: usize,
    pub trace: Vec<CfqiTraceRow>,
    /// Levels without samples, whose fit stayed at `Q ≡ 0`.
    pub missing_levels: Vec<usize>,
}

impl CfqiOutcome {
    /// Mean risk over the fits of the last round.
    pub fn final_risk(&self) -> f64 {
        let last: Vec<f64> = self.trace.iter().filter(|r| r.iter == self.iterations).map(|r| r.risk).collect();
        if last.is_empty() {
            0.0
        } else {
            last.iter().sum::<f64>() / last.len() as f64
        }
    }

    /// `max over levels of sup_delta`, one entry per round.
    pub fn sup_deltas(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.iterations];
        for r in &self.trace {
            out[r.iter - 1] = f64::max(out[r.iter - 1], r.sup_delta);
        }
        out
    }

    /// CSV `iter,level,risk,epsilon,sup_delta`.
    pub fn write_trace<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        for row in &self.trace {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_trace<R: std::io::Read>(reader: R) -> Result<Vec<CfqiTraceRow>> {
        let mut rdr = csv::Reader::from_reader(reader);
        Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
    }
}

/// Runs `τ` rounds of concave fitted Q-iteration on `data`.
pub fn cfqi<F: Feasibility>(data: &Dataset, feasibility: &F, class: QClass, cfg: &CfqiConfig) -> Result<CfqiOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let joint = cfg.joint;
    let mut counts = vec![0usize; class.levels];
    for t in &data.samples {
        if t.state.level >= class.levels {
            return Err(Error::InvariantViolation(format!("sample level {} out of range", t.state.level)));
        }
        counts[t.state.level] += 1;
    }
    let missing_levels: Vec<usize> = (0..class.levels).filter(|w| counts[*w] == 0).collect();
    if !joint {
        for w in &missing_levels {
            warn!("income level {w} has no samples; its Q stays at zero");
        }
    }

    let iterations = cfg.resolved_iterations(data.len());
    let mut q = ConcaveQ::zero(class.levels, joint, class.bound, class.lipschitz);
    let mut trace = Vec::with_capacity(iterations * class.levels);
    for iter in 1..=iterations {
        let problems = bellman_targets(data, &q, cfg.discount, feasibility, class.levels, joint, class.lipschitz);
        let fits: Vec<(MaxAffineFn, f64, f64)> = problems
            .into_par_iter()
            .enumerate()
            .map(|(level, mut problem)| -> Result<(MaxAffineFn, f64, f64)> {
                if problem.is_empty() {
                    return Ok((
                        MaxAffineFn::constant(problem.dim, class.bound, class.lipschitz, class.bound)?,
                        0.0,
                        0.0,
                    ));
                }
                problem.pieces = cfg.pieces.resolve(problem.len(), problem.dim);
                problem.restarts = cfg.restarts;
                problem.tolerance = cfg.tolerance;
                problem.max_sweeps = cfg.max_sweeps;
                problem.seed = seeds::derive(cfg.seed, &[iter as u64, level as u64]);
                if cfg.warm_start && iter > 1 {
                    problem.warm_start = Some(q.convex_part(level).clone());
                }
                let out = fit_max_affine(&problem)?;
                Ok((out.function, out.risk, out.epsilon))
            })
            .collect::<Result<Vec<_>>>()?;

        let next = if joint {
            ConcaveQ::joint(fits[0].0.clone(), class.bound)?
        } else {
            ConcaveQ::per_level(fits.iter().map(|f| f.0.clone()).collect(), class.bound)?
        };
        let deltas = sup_deltas(data, &q, &next, if joint { 1 } else { class.levels }, joint);
        for (level, (_, risk, epsilon)) in fits.iter().enumerate() {
            trace.push(CfqiTraceRow { iter, level, risk: *risk, epsilon: *epsilon, sup_delta: deltas[level] });
        }
        q = next;
    }
    Ok(CfqiOutcome { q, iterations, trace, missing_levels })
}

/// [`cfqi`] with the feasibility and Q-class of `env` at the dataset's
/// mean-field term.
pub fn cfqi_for<E: Economy + ?Sized>(env: &E, data: &Dataset, cfg: &CfqiConfig) -> Result<CfqiOutcome> {
    let budget = env.budget(&data.mean_field);
    cfqi(data, &budget, QClass::of(env), cfg)
}

fn sup_deltas(data: &Dataset, old: &ConcaveQ, new: &ConcaveQ, groups: usize, joint: bool) -> Vec<f64> {
    let mut out = vec![0.0; groups];
    for t in &data.samples {
        let g = if joint { 0 } else { t.state.level };
        let d = (old.value(&t.state, t.action) - new.value(&t.state, t.action)).abs();
        out[g] = f64::max(out[g], d);
    }
    out
}
