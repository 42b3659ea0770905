//! The outer mean-field iteration.
//!
//! Each round prices the market from the population simulated under the
//! previous policy, draws a fresh offline dataset at the new prices, runs
//! concave fitted Q-iteration on it and turns the fit into a Gibbs policy.

mod oracle;

pub use oracle::{grid_q, reference_equilibrium, GridQ, OracleConfig, OracleOutcome};

use std::io::{Read, Write};
use std::time::Instant;

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cfqi::{cfqi_for, CfqiConfig};
use crate::economy::{AggregateIndicators, BudgetSet, Economy, MeanFieldTerm};
use crate::error::{Error, Result};
use crate::mdp::{ConcaveQ, HouseholdState};
use crate::policy::{uniform_policy, GibbsPolicy, Policy, UniformPolicy};
use crate::seeds;

/// Pre-clamp excess, in box widths, beyond which a round counts as diverged.
pub const DIVERGENCE_WIDTHS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Outer rounds `T`.
    pub rounds: usize,
    /// Transitions per offline dataset `M`.
    pub samples: usize,
    pub cfqi: CfqiConfig,
    /// Starting mean-field term `z⁰`.
    pub initial: MeanFieldTerm,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { rounds: 15, samples: 1000, cfqi: CfqiConfig::default(), initial: MeanFieldTerm::new(1.0, 0.1), seed: 0 }
    }
}

/// Household policy in force during one round.
#[derive(Debug, Clone)]
pub enum RoundPolicy {
    Uniform(UniformPolicy<BudgetSet>),
    Gibbs(GibbsPolicy<ConcaveQ, BudgetSet>),
}

impl Policy for RoundPolicy {
    fn sample<R: Rng + ?Sized>(&self, s: &HouseholdState, rng: &mut R) -> Result<f64> {
        match self {
            RoundPolicy::Uniform(p) => p.sample(s, rng),
            RoundPolicy::Gibbs(p) => p.sample(s, rng),
        }
    }
}

/// Diagnostics of round `t ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundDiagnostics {
    pub t: usize,
    /// `‖z^t - z^{t-1}‖₁`.
    pub delta_l1: f64,
    /// Mean final-round risk of the CFQI fits.
    pub cfqi_mean_risk: f64,
    pub cfqi_iterations: usize,
    /// Aggregates that produced `z^t`.
    pub psi: AggregateIndicators,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    /// `z⁰, …, z^T`.
    pub trajectory: Vec<MeanFieldTerm>,
    pub rounds: Vec<RoundDiagnostics>,
    /// `Q̂^T`, absent when `T = 0`.
    pub final_q: Option<ConcaveQ>,
    pub zeta: f64,
    pub seed: u64,
}

impl EquilibriumResult {
    /// `z^T`.
    pub fn last(&self) -> MeanFieldTerm {
        *self.trajectory.last().expect("trajectory holds z0")
    }

    /// `π̂^T` under `env`'s budget at `z^T`.
    pub fn final_policy<E: Economy + ?Sized>(&self, env: &E) -> Result<RoundPolicy> {
        let budget = env.budget(&self.last());
        Ok(match &self.final_q {
            Some(q) => RoundPolicy::Gibbs(GibbsPolicy::new(q.clone(), budget, self.zeta)?),
            None => RoundPolicy::Uniform(uniform_policy(budget)),
        })
    }

    pub fn rows(&self) -> Vec<TrajectoryRow> {
        self.trajectory
            .iter()
            .enumerate()
            .map(|(t, z)| {
                let d = if t == 0 { None } else { Some(&self.rounds[t - 1]) };
                TrajectoryRow {
                    t,
                    wage: z.wage,
                    rent: z.rent,
                    delta_l1: d.map(|d| d.delta_l1),
                    cfqi_mean_risk: d.map(|d| d.cfqi_mean_risk),
                    psi_k: d.map(|d| d.psi.capital),
                    psi_n: d.map(|d| d.psi.labor),
                    seconds: d.map(|d| d.seconds),
                }
            })
            .collect()
    }

    /// CSV `t,wage,rent,delta_l1,cfqi_mean_risk,psi_K,psi_N,seconds`; the
    /// round-0 row leaves the per-round columns empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_trajectory(&self.rows(), writer)
    }
}

/// One line of a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub wage: f64,
    pub rent: f64,
    pub delta_l1: Option<f64>,
    pub cfqi_mean_risk: Option<f64>,
    #[serde(rename = "psi_K")]
    pub psi_k: Option<f64>,
    #[serde(rename = "psi_N")]
    pub psi_n: Option<f64>,
    pub seconds: Option<f64>,
}

pub fn write_trajectory<W: Write>(rows: &[TrajectoryRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(reader: R) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Runs `T` outer rounds from `z⁰` with `Q⁰ ≡ 0` and the uniform policy.
pub fn solve<E: Economy>(env: &E, cfg: &SolveConfig) -> Result<EquilibriumResult> {
    if cfg.samples == 0 {
        return Err(Error::Config("dataset size must be >= 1".into()));
    }
    cfg.cfqi.validate()?;
    let zbox = env.mean_field_box();
    let zeta = env.regularization();
    let mut z = zbox.clamp(cfg.initial);
    let mut trajectory = vec![z];
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut policy = RoundPolicy::Uniform(uniform_policy(env.budget(&z)));
    let mut final_q = None;

    for t in 1..=cfg.rounds {
        let start = Instant::now();
        let tag = t as u64;
        let psi = env.aggregate_psi(&z, &policy, seeds::derive(cfg.seed, &[tag, 0]))?;
        let raw = env.firm_prices(&psi);
        let excess = zbox.excess(&raw);
        if !(excess <= DIVERGENCE_WIDTHS * zbox.width()) {
            return Err(Error::IterationDiverged { round: t, excess });
        }
        let next = zbox.clamp(raw);
        let psi_seconds = start.elapsed().as_secs_f64();

        let data = env.sample_dataset(&next, cfg.samples, seeds::derive(cfg.seed, &[tag, 1]));
        let cfqi_cfg = CfqiConfig { seed: seeds::derive(cfg.seed, &[tag, 2]), ..cfg.cfqi.clone() };
        let fitted = cfqi_for(env, &data, &cfqi_cfg)?;
        policy = RoundPolicy::Gibbs(GibbsPolicy::new(fitted.q.clone(), env.budget(&next), zeta)?);

        let diag = RoundDiagnostics {
            t,
            delta_l1: next.l1_distance(&z),
            cfqi_mean_risk: fitted.final_risk(),
            cfqi_iterations: fitted.iterations,
            psi,
            seconds: start.elapsed().as_secs_f64(),
        };
        debug!(
            "round {t}: K={:.5} N={:.5} -> wage={:.6} rent={:.6} (Δ={:.3e}, Ψ {:.2}s, total {:.2}s)",
            psi.capital, psi.labor, next.wage, next.rent, diag.delta_l1, psi_seconds, diag.seconds
        );
        rounds.push(diag);
        trajectory.push(next);
        final_q = Some(fitted.q);
        z = next;
    }
    info!("solve finished after {} rounds at wage={:.6} rent={:.6}", cfg.rounds, z.wage, z.rent);
    Ok(EquilibriumResult { trajectory, rounds, final_q, zeta, seed: cfg.seed })
}

/// Successive increment ratios of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// `‖z^{t+1} - z^t‖₁ / ‖z^t - z^{t-1}‖₁`, zero when the denominator is.
    pub ratios: Vec<f64>,
    pub geometric_mean: f64,
}

pub fn contraction_diagnostics(trajectory: &[MeanFieldTerm]) -> Result<ContractionReport> {
    if trajectory.len() < 3 {
        return Err(Error::InsufficientTrajectory(trajectory.len()));
    }
    let increments: Vec<f64> = trajectory.windows(2).map(|w| w[1].l1_distance(&w[0])).collect();
    let ratios: Vec<f64> = increments.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect();
    let geometric_mean = if ratios.contains(&0.0) {
        0.0
    } else {
        (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp()
    };
    Ok(ContractionReport { ratios, geometric_mean })
}
