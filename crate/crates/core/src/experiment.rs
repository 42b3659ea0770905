//! Sample-size sweeps, rate fits, regression micro-benchmarks and the flat
//! configuration file shared by the command-line tool.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfqi::{CfqiConfig, PieceCount};
use crate::economy::{Aiyagari, AiyagariConfig, Economy, MeanFieldTerm};
use crate::equilibrium::{reference_equilibrium, solve, EquilibriumResult, OracleConfig, SolveConfig};
use crate::error::{Error, Result};
use crate::seeds;
use crate::shape_reg::{fit_max_affine, select_piece_count, MaxAffineFn, RegressionProblem};

/// Solver and harness settings of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Dataset size `M` of a single solve.
    pub samples: usize,
    /// Outer rounds `T`.
    pub rounds: usize,
    pub trials: usize,
    pub seed: u64,
    pub m_list: Vec<usize>,
    pub initial_wage: f64,
    pub initial_rent: f64,
    /// CFQI rounds `τ`; 0 picks the default schedule.
    pub cfqi_iterations: usize,
    pub restarts: usize,
    pub max_sweeps: usize,
    pub k_max: usize,
    /// Fixed piece count; 0 picks the sample-size rule.
    pub pieces: usize,
    pub joint_fit: bool,
    pub warm_start: bool,
    pub oracle_capital_points: usize,
    pub oracle_action_points: usize,
    pub oracle_max_rounds: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let cfqi = CfqiConfig::default();
        let oracle = OracleConfig::default();
        Self {
            samples: 1000,
            rounds: 15,
            trials: 10,
            seed: 0,
            m_list: vec![250, 1000, 4000],
            initial_wage: 1.0,
            initial_rent: 0.1,
            cfqi_iterations: 0,
            restarts: cfqi.restarts,
            max_sweeps: cfqi.max_sweeps,
            k_max: 64,
            pieces: 0,
            joint_fit: false,
            warm_start: cfqi.warm_start,
            oracle_capital_points: oracle.capital_points,
            oracle_action_points: oracle.action_points,
            oracle_max_rounds: oracle.max_rounds,
            jobs: 0,
        }
    }
}

/// Everything the command-line tool reads from a config file: economy
/// calibration and solver settings, as one flat key/value table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(flatten)]
    pub economy: AiyagariConfig,
    #[serde(flatten)]
    pub solver: SolverSettings,
}

impl Config {
    /// Parses flat `key = value` TOML, rejecting unknown keys.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let known = Self::known_keys();
        if let Some(bad) = table.keys().find(|k| !known.contains(k)) {
            return Err(Error::Config(format!(
                "unknown config key `{bad}` (run with --print-config for the full list)"
            )));
        }
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn known_keys() -> Vec<String> {
        match toml::Value::try_from(Self::default()).expect("config serializes") {
            toml::Value::Table(t) => t.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.economy.validate()?;
        let s = &self.solver;
        if s.samples == 0 || s.trials == 0 || s.restarts == 0 || s.max_sweeps == 0 || s.k_max == 0 {
            return Err(Error::Config("samples, trials, restarts, max_sweeps and k_max must be >= 1".into()));
        }
        if s.oracle_capital_points < 2 || s.oracle_action_points < 2 || s.oracle_max_rounds == 0 {
            return Err(Error::Config("oracle grids need at least 2 points and oracle_max_rounds >= 1".into()));
        }
        Ok(())
    }

    pub fn economy(&self) -> Result<Aiyagari> {
        Aiyagari::new(self.economy.clone())
    }

    pub fn cfqi(&self) -> CfqiConfig {
        let s = &self.solver;
        CfqiConfig {
            iterations: (s.cfqi_iterations > 0).then_some(s.cfqi_iterations),
            discount: self.economy.discount,
            restarts: s.restarts,
            max_sweeps: s.max_sweeps,
            pieces: if s.pieces > 0 { PieceCount::Fixed(s.pieces) } else { PieceCount::Auto { k_max: s.k_max } },
            joint: s.joint_fit,
            warm_start: s.warm_start,
            ..CfqiConfig::default()
        }
    }

    /// Settings of one solve with `samples` transitions and master `seed`.
    pub fn solve(&self, samples: usize, seed: u64) -> SolveConfig {
        SolveConfig {
            rounds: self.solver.rounds,
            samples,
            cfqi: self.cfqi(),
            initial: MeanFieldTerm::new(self.solver.initial_wage, self.solver.initial_rent),
            seed,
        }
    }

    pub fn oracle(&self) -> OracleConfig {
        OracleConfig {
            capital_points: self.solver.oracle_capital_points,
            action_points: self.solver.oracle_action_points,
            max_rounds: self.solver.oracle_max_rounds,
            initial: MeanFieldTerm::new(self.solver.initial_wage, self.solver.initial_rent),
            ..OracleConfig::default()
        }
    }
}

/// A sample-size sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    pub rounds: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl ExperimentPlan {
    pub fn from_config(cfg: &Config, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            sample_sizes: cfg.solver.m_list.clone(),
            trials: cfg.solver.trials,
            rounds: cfg.solver.rounds,
            seed: cfg.solver.seed,
            out_dir: out_dir.into(),
            jobs: cfg.solver.jobs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() {
            return Err(Error::Config("the plan needs at least one sample size".into()));
        }
        if let Some(m) = self.sample_sizes.iter().find(|m| **m < 50) {
            return Err(Error::Config(format!("sample size {m} is below the minimum of 50")));
        }
        if self.trials == 0 {
            return Err(Error::Config("the plan needs at least one trial".into()));
        }
        Ok(())
    }

    /// Master seed of trial `trial` at sample size `m`.
    pub fn trial_seed(&self, m: usize, trial: usize) -> u64 {
        seeds::derive(self.seed, &[m as u64, trial as u64])
    }
}

/// Final error of one solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    pub wage: f64,
    pub rent: f64,
    pub error: f64,
}

/// Error statistics at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub m: usize,
    pub trials: usize,
    pub mean_error: f64,
    pub sd_error: f64,
    pub median_error: f64,
    pub min_error: f64,
    pub max_error: f64,
}

/// Least-squares line through `(log M, log error)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub reference: MeanFieldTerm,
    pub trials: Vec<TrialRecord>,
    pub aggregate: Vec<AggregateRow>,
    pub rate: RateFit,
    /// Full results in plan order (sample size major, trial minor).
    pub runs: Vec<EquilibriumResult>,
}

/// Ordinary least squares of `ln error` on `ln M`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if let Some(p) = points.iter().find(|(m, e)| !(*m > 0.0 && *e > 0.0 && m.is_finite() && e.is_finite())) {
        return Err(Error::DegenerateInput(format!("need positive sample sizes and errors, got {p:?}")));
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateInput("need at least two distinct sample sizes".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(RateFit { slope, intercept, r_squared })
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn aggregate(trials: &[TrialRecord]) -> Vec<AggregateRow> {
    let mut sizes: Vec<usize> = trials.iter().map(|t| t.m).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|m| {
            let errs: Vec<f64> = trials.iter().filter(|t| t.m == m).map(|t| t.error).collect();
            let (mean, sd) = mean_sd(&errs);
            AggregateRow {
                m,
                trials: errs.len(),
                mean_error: mean,
                sd_error: sd,
                median_error: median(&errs),
                min_error: errs.iter().copied().fold(f64::INFINITY, f64::min),
                max_error: errs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Runs the sweep against a precomputed reference `z*` and writes
/// `run_m{M}_trial{k}.csv`, `trials.csv`, `aggregate.csv`, `rate.csv` and
/// `convergence.svg` into the plan's output directory.
pub fn run_experiment_against<E: Economy>(
    env: &E,
    cfg: &Config,
    plan: &ExperimentPlan,
    reference: MeanFieldTerm,
) -> Result<ExperimentSummary> {
    plan.validate()?;
    fs::create_dir_all(&plan.out_dir)?;
    let jobs: Vec<(usize, usize)> =
        plan.sample_sizes.iter().flat_map(|&m| (0..plan.trials).map(move |k| (m, k))).collect();
    let run_one = |&(m, k): &(usize, usize)| -> Result<(TrialRecord, EquilibriumResult)> {
        let clock = Instant::now();
        let seed = plan.trial_seed(m, k);
        let solve_cfg = SolveConfig { rounds: plan.rounds, ..cfg.solve(m, seed) };
        let result = solve(env, &solve_cfg)?;
        let path = plan.out_dir.join(format!("run_m{m}_trial{k}.csv"));
        result.write_csv(fs::File::create(&path)?)?;
        let z = result.last();
        info!("M={m} trial {k}: error {:.4e} ({:.1}s)", z.l1_distance(&reference), clock.elapsed().as_secs_f64());
        Ok((TrialRecord { m, trial: k, seed, wage: z.wage, rent: z.rent, error: z.l1_distance(&reference) }, result))
    };
    let outcomes: Vec<(TrialRecord, EquilibriumResult)> = if plan.jobs == 0 {
        jobs.par_iter().map(run_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(plan.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", plan.jobs)))?;
        pool.install(|| jobs.par_iter().map(run_one).collect::<Result<_>>())?
    };
    let (trials, runs): (Vec<TrialRecord>, Vec<EquilibriumResult>) = outcomes.into_iter().unzip();

    let aggregate = aggregate(&trials);
    let points: Vec<(f64, f64)> = aggregate.iter().map(|a| (a.m as f64, a.mean_error)).collect();
    let rate = if points.len() >= 2 {
        rate_fit(&points)?
    } else {
        RateFit { slope: f64::NAN, intercept: f64::NAN, r_squared: f64::NAN }
    };

    write_csv_rows(&plan.out_dir.join("trials.csv"), &trials)?;
    write_csv_rows(&plan.out_dir.join("aggregate.csv"), &aggregate)?;
    write_csv_rows(&plan.out_dir.join("rate.csv"), &[rate])?;
    fs::write(plan.out_dir.join("convergence.svg"), convergence_svg(&aggregate, &rate))?;
    Ok(ExperimentSummary { reference, trials, aggregate, rate, runs })
}

/// [`run_experiment_against`] with `z*` from the grid oracle, also written
/// to `oracle.csv`.
pub fn run_experiment(cfg: &Config, plan: &ExperimentPlan) -> Result<ExperimentSummary> {
    plan.validate()?;
    let env = cfg.economy()?;
    let oracle = reference_equilibrium(&env, &cfg.oracle())?;
    fs::create_dir_all(&plan.out_dir)?;
    write_oracle(&plan.out_dir.join("oracle.csv"), &oracle.z)?;
    run_experiment_against(&env, cfg, plan, oracle.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct OracleRow {
    wage: f64,
    rent: f64,
}

pub fn write_oracle(path: &Path, z: &MeanFieldTerm) -> Result<()> {
    write_csv_rows(path, &[OracleRow { wage: z.wage, rent: z.rent }])
}

pub fn read_oracle(path: &Path) -> Result<MeanFieldTerm> {
    let rows: Vec<OracleRow> = read_csv_rows(path)?;
    let r = rows.first().ok_or_else(|| Error::Config(format!("{} holds no row", path.display())))?;
    Ok(MeanFieldTerm::new(r.wage, r.rent))
}

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// Log-log plot of mean error ±1 sd against `M` with the fitted rate line.
/// Every plotted value is carried verbatim in `data-*` attributes.
pub fn convergence_svg(rows: &[AggregateRow], rate: &RateFit) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if rows.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let lx: Vec<f64> = rows.iter().map(|r| (r.m as f64).log10()).collect();
    let lows: Vec<f64> = rows.iter().map(|r| (r.mean_error - r.sd_error).max(r.mean_error * 0.1)).collect();
    let highs: Vec<f64> = rows.iter().map(|r| r.mean_error + r.sd_error).collect();
    let (x0, x1) = span(&lx, 0.15);
    let ly: Vec<f64> = lows.iter().chain(&highs).map(|v| v.max(1e-300).log10()).collect();
    let (y0, y1) = span(&ly, 0.15);
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let _ = writeln!(
        svg,
        r#"<g stroke="black" fill="none"><line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}"/></g>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">sample size M (log scale)</text>"#,
        W / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" font-size="14" transform="rotate(-90 15 {})" text-anchor="middle">mean l1 error of z^T (log scale)</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, r) in rows.iter().enumerate() {
        let cx = px(lx[i]);
        let _ = writeln!(
            svg,
            r#"<line class="errorbar" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="gray"/>"#,
            py(lows[i].log10()),
            py(highs[i].log10())
        );
        let _ = writeln!(
            svg,
            r#"<circle class="point" cx="{cx:.2}" cy="{:.2}" r="4" fill="steelblue" data-m="{}" data-mean="{}" data-sd="{}"/>"#,
            py(r.mean_error.log10()),
            r.m,
            r.mean_error,
            r.sd_error
        );
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            H - PAD + 18.0,
            r.m
        );
    }
    if rate.slope.is_finite() {
        // log10 e = a + b log10 M, with the fit done in natural logs
        let line = |lm: f64| (rate.intercept + rate.slope * lm * std::f64::consts::LN_10) / std::f64::consts::LN_10;
        let _ = writeln!(
            svg,
            r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-dasharray="6 4" data-slope="{}" data-intercept="{}"/>"#,
            px(lx[0]),
            py(line(lx[0])),
            px(lx[lx.len() - 1]),
            py(line(lx[lx.len() - 1])),
            rate.slope,
            rate.intercept
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="13" fill="firebrick">fitted slope {:.3}</text>"#,
            W - PAD,
            PAD - 10.0,
            rate.slope
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn span(v: &[f64], pad: f64) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo).max(1e-3);
    (lo - pad * width, hi + pad * width)
}

/// One max-affine fitting benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBenchRow {
    pub m: usize,
    pub dim: usize,
    pub pieces: usize,
    pub seconds: f64,
    pub risk: f64,
    pub test_rmse: f64,
}

/// Fits noisy samples of `x ↦ ‖x‖² / d` on `[-1, 1]^d` for each size in
/// `sizes` and measures time, training risk and RMSE on held-out points.
/// Returns each benchmark row with its fitted model.
pub fn fit_bench(sizes: &[usize], dim: usize, noise: f64, seed: u64) -> Result<Vec<(FitBenchRow, MaxAffineFn)>> {
    let target = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / dim as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test: Vec<Vec<f64>> = (0..2000).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    sizes
        .iter()
        .map(|&m| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[m as u64]));
            let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let ys: Vec<f64> =
                rows.iter().map(|x| target(x) + noise * (rng.gen::<f64>() - 0.5) * 12f64.sqrt()).collect();
            let pieces = select_piece_count(m, dim, 64);
            let problem = RegressionProblem::from_rows(&rows, ys, pieces, 2.0, 10.0)?.with_seed(seed);
            let clock = Instant::now();
            let out = fit_max_affine(&problem)?;
            let seconds = clock.elapsed().as_secs_f64();
            let mse = test.iter().map(|x| (out.function.value(x) - target(x)).powi(2)).sum::<f64>() / test.len() as f64;
            Ok((FitBenchRow { m, dim, pieces, seconds, risk: out.risk, test_rmse: mse.sqrt() }, out.function))
        })
        .collect()
}
