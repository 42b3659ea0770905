//! Least-squares fitting over bounded Lipschitz max-affine functions.
//!
//! The solver alternates between partitioning the samples by their maximizing
//! piece and refitting every piece by ridge-damped least squares on its cell.
//! After each refit the slopes are clamped coordinate-wise to `[-L, L]` and the
//! intercept is re-solved for the clamped slope. Several initializations are
//! run and the lowest empirical risk seen anywhere is returned; one of them is
//! always the global affine fit, so the result never does worse than affine
//! least squares.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::max_affine::{check_bounds, piece_box_max, MaxAffineFn};
use crate::error::{Error, Result};

/// Ridge damping per sample.
const RIDGE_PER_SAMPLE: f64 = 1e-9;

/// Sweeps without improvement after which a restart stops.
const STALL_SWEEPS: usize = 5;

/// A regression instance `x_m ↦ y_m` together with the fitting class and
/// solver settings.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub dim: usize,
    /// Row-major `M × dim` inputs.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub pieces: usize,
    pub lipschitz: f64,
    pub upper_bound: f64,
    /// Number of initializations, including the affine seed.
    pub restarts: usize,
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub seed: u64,
    /// Box on which the fit must stay below `upper_bound`. Without one the
    /// bound is left to the caller.
    pub domain: Option<Vec<(f64, f64)>>,
    /// Extra initialization taken from a previous fit.
    pub warm_start: Option<MaxAffineFn>,
}

impl RegressionProblem {
    pub fn new(
        dim: usize,
        inputs: Vec<f64>,
        targets: Vec<f64>,
        pieces: usize,
        lipschitz: f64,
        upper_bound: f64,
    ) -> Self {
        Self {
            dim,
            inputs,
            targets,
            pieces,
            lipschitz,
            upper_bound,
            restarts: 8,
            tolerance: 1e-10,
            max_sweeps: 50,
            seed: 0,
            domain: None,
            warm_start: None,
        }
    }

    /// Builds a problem from one row per sample.
    pub fn from_rows(
        rows: &[Vec<f64>],
        targets: Vec<f64>,
        pieces: usize,
        lipschitz: f64,
        upper_bound: f64,
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        let inputs = rows.iter().flatten().copied().collect();
        Ok(Self::new(dim, inputs, targets, pieces, lipschitz, upper_bound))
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_sweeps(mut self, max_sweeps: usize) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn with_warm_start(mut self, warm: MaxAffineFn) -> Self {
        self.warm_start = Some(warm);
        self
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, m: usize) -> &[f64] {
        &self.inputs[m * self.dim..(m + 1) * self.dim]
    }

    /// Sum of squared residuals of `f` on this problem.
    pub fn sse(&self, f: &MaxAffineFn) -> f64 {
        (0..self.len())
            .map(|m| {
                let r = self.targets[m] - f.value(self.input(m));
                r * r
            })
            .sum()
    }

    fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::EmptyData);
        }
        check_bounds(self.lipschitz, self.upper_bound)?;
        if self.dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if self.inputs.len() != self.dim * self.targets.len() {
            return Err(Error::DimensionMismatch { expected: self.dim * self.targets.len(), got: self.inputs.len() });
        }
        if self.pieces == 0 {
            return Err(Error::InvalidBounds("piece count must be >= 1".into()));
        }
        if let Some(dom) = &self.domain {
            if dom.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: dom.len() });
            }
        }
        Ok(())
    }
}

/// Result of [`fit_max_affine`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub function: MaxAffineFn,
    /// Mean squared residual of `function`.
    pub risk: f64,
    /// Sum of squared residuals of `function`.
    pub sse: f64,
    /// Excess-risk estimate: median restart SSE minus the best SSE.
    pub epsilon: f64,
    /// Sweeps used by the winning restart.
    pub sweeps: usize,
    /// Best SSE reached by each restart, in restart order.
    pub restart_sse: Vec<f64>,
}

/// `⌈M^{d/(d+4)}⌉`, floored at 1 and capped at `k_max`.
pub fn select_piece_count(samples: usize, dim: usize, k_max: usize) -> usize {
    if samples <= 1 {
        return 1;
    }
    let exponent = dim as f64 / (dim as f64 + 4.0);
    let raw = (samples as f64).powf(exponent);
    // exact powers such as 8^{1/3} come out a hair above the integer
    let k = (raw - 1e-9).ceil() as usize;
    k.clamp(1, k_max.max(1))
}

/// Single affine least-squares fit (ridge damped), slopes clamped to `[-L, L]`.
pub fn fit_affine_ols(problem: &RegressionProblem) -> Result<MaxAffineFn> {
    problem.validate()?;
    let d = problem.dim;
    let mut acc = Moments::new(d);
    for m in 0..problem.len() {
        acc.add(problem.input(m), problem.targets[m]);
    }
    let lambda = RIDGE_PER_SAMPLE * problem.len() as f64;
    let mut slope = vec![0.0; d];
    let c = acc.solve_projected(&mut slope, lambda, problem);
    Ok(MaxAffineFn::from_parts(d, slope, vec![c], problem.lipschitz, problem.upper_bound))
}

/// Alternating-partition max-affine least squares with restarts.
pub fn fit_max_affine(problem: &RegressionProblem) -> Result<FitOutcome> {
    problem.validate()?;
    let affine = fit_affine_ols(problem)?;
    let restarts = problem.restarts.max(1);
    let scale = input_scale(problem);
    let runs: Vec<RestartRun> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let init = initial_pieces(problem, &affine, &scale, r);
            alternate(problem, &scale, init)
        })
        .collect();

    let (winner, _) = runs
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.sse.total_cmp(&b.sse).then(ia.cmp(ib)))
        .expect("at least one restart");
    let best = &runs[winner];
    let mut function = prune_inactive(problem, &best.pieces);
    function.dedup_pieces();
    let sse = problem.sse(&function);

    let mut sorted: Vec<f64> = runs.iter().map(|r| r.sse).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    Ok(FitOutcome {
        function,
        risk: sse / problem.len() as f64,
        sse,
        epsilon: (median - best.sse).max(0.0),
        sweeps: best.sweeps,
        restart_sse: runs.iter().map(|r| r.sse).collect(),
    })
}

#[derive(Clone)]
struct Pieces {
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
}

impl Pieces {
    fn len(&self) -> usize {
        self.intercepts.len()
    }

    #[inline]
    fn eval(&self, d: usize, x: &[f64]) -> (f64, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for k in 0..self.intercepts.len() {
            let row = &self.slopes[k * d..(k + 1) * d];
            let v = row.iter().zip(x).fold(self.intercepts[k], |acc, (a, xi)| acc + a * xi);
            if v > best {
                best = v;
                arg = k;
            }
        }
        (best, arg)
    }
}

struct RestartRun {
    pieces: Pieces,
    sse: f64,
    sweeps: usize,
}

/// Sufficient statistics of one cell.
struct Moments {
    d: usize,
    n: f64,
    sx: Vec<f64>,
    sy: f64,
    sxx: Vec<f64>,
    sxy: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self { d, n: 0.0, sx: vec![0.0; d], sy: 0.0, sxx: vec![0.0; d * d], sxy: vec![0.0; d] }
    }

    fn reset(&mut self) {
        self.n = 0.0;
        self.sy = 0.0;
        self.sx.iter_mut().for_each(|v| *v = 0.0);
        self.sxx.iter_mut().for_each(|v| *v = 0.0);
        self.sxy.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn add(&mut self, x: &[f64], y: f64) {
        let d = self.d;
        self.n += 1.0;
        self.sy += y;
        for i in 0..d {
            self.sx[i] += x[i];
            self.sxy[i] += x[i] * y;
            for j in 0..d {
                self.sxx[i * d + j] += x[i] * x[j];
            }
        }
    }

    /// Ridge solve on centered moments, then clamp slopes and re-solve the
    /// intercept; returns the intercept and writes the slope.
    fn solve_projected(&self, slope: &mut [f64], lambda: f64, problem: &RegressionProblem) -> f64 {
        let d = self.d;
        let n = self.n;
        let mean_x: Vec<f64> = self.sx.iter().map(|s| s / n).collect();
        let mean_y = self.sy / n;
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for i in 0..d {
            rhs[i] = self.sxy[i] - n * mean_x[i] * mean_y;
            for j in 0..d {
                cov[(i, j)] = self.sxx[i * d + j] - n * mean_x[i] * mean_x[j];
            }
            cov[(i, i)] += lambda;
        }
        match cov.cholesky() {
            Some(ch) => {
                let sol = ch.solve(&rhs);
                slope.copy_from_slice(sol.as_slice());
            }
            None => slope.iter_mut().for_each(|a| *a = 0.0),
        }
        project(slope, &mean_x, mean_y, problem)
    }
}

/// Clamp the slope into `[-L, L]^d` and return the least-squares intercept for
/// it, lowered if needed so the piece stays below `B` on the declared domain.
fn project(slope: &mut [f64], mean_x: &[f64], mean_y: f64, problem: &RegressionProblem) -> f64 {
    let l = problem.lipschitz;
    for a in slope.iter_mut() {
        *a = if a.is_finite() { a.clamp(-l, l) } else { 0.0 };
    }
    let c = mean_y - slope.iter().zip(mean_x).map(|(a, x)| a * x).sum::<f64>();
    cap_intercept(slope, c, problem)
}

fn cap_intercept(slope: &[f64], c: f64, problem: &RegressionProblem) -> f64 {
    match &problem.domain {
        Some(dom) => c.min(problem.upper_bound - piece_box_max(slope, dom)),
        None => c,
    }
}

/// Per-coordinate standard deviation of the inputs (1 where degenerate).
fn input_scale(problem: &RegressionProblem) -> Vec<f64> {
    let d = problem.dim;
    let n = problem.len() as f64;
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for m in 0..problem.len() {
        for (i, x) in problem.input(m).iter().enumerate() {
            mean[i] += x;
            sq[i] += x * x;
        }
    }
    (0..d)
        .map(|i| {
            let mu = mean[i] / n;
            let var = sq[i] / n - mu * mu;
            if var > 1e-300 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

fn initial_pieces(problem: &RegressionProblem, affine: &MaxAffineFn, scale: &[f64], restart: usize) -> Pieces {
    let k = problem.pieces;
    let d = problem.dim;
    if restart == 0 {
        return Pieces { slopes: affine.slopes().repeat(k), intercepts: vec![affine.intercept(0); k] };
    }
    if restart == 1 {
        if let Some(warm) = problem.warm_start.as_ref().filter(|w| w.dim() == d) {
            let take = warm.num_pieces().min(k);
            let mut slopes = warm.slopes()[..take * d].to_vec();
            let mut intercepts = warm.intercepts()[..take].to_vec();
            for a in slopes.iter_mut() {
                *a = a.clamp(-problem.lipschitz, problem.lipschitz);
            }
            // padding duplicates get respawned on the first sweep
            while intercepts.len() < k {
                slopes.extend_from_slice(&warm.slopes()[..d]);
                intercepts.push(intercepts[0]);
            }
            return Pieces { slopes, intercepts };
        }
    }
    voronoi_init(problem, scale, restart)
}

/// Local least-squares slopes on the Voronoi cells of `K` random anchor
/// samples, jittered.
fn voronoi_init(problem: &RegressionProblem, scale: &[f64], restart: usize) -> Pieces {
    let k = problem.pieces;
    let d = problem.dim;
    let m_total = problem.len();
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    rng.set_stream(restart as u64);

    let y_mean = problem.targets.iter().sum::<f64>() / m_total as f64;
    let y_sd = (problem.targets.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / m_total as f64).sqrt().max(1e-12);

    let anchors = rand::seq::index::sample(&mut rng, m_total, k.min(m_total)).into_vec();
    let mut cells: Vec<Moments> = (0..anchors.len()).map(|_| Moments::new(d)).collect();
    for m in 0..m_total {
        let x = problem.input(m);
        let nearest = anchors
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let xa = problem.input(a);
                let dist: f64 = (0..d).map(|i| ((x[i] - xa[i]) / scale[i]).powi(2)).sum();
                (dist, j)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1;
        cells[nearest].add(x, problem.targets[m]);
    }

    let lambda = RIDGE_PER_SAMPLE * m_total as f64;
    let mut slopes = Vec::with_capacity(k * d);
    let mut intercepts = Vec::with_capacity(k);
    for cell in &cells {
        let mut slope = vec![0.0; d];
        if cell.n > 0.0 {
            cell.solve_projected(&mut slope, lambda, problem);
            for (i, a) in slope.iter_mut().enumerate() {
                *a += 0.1 * y_sd / scale[i] * rng.gen_range(-1.0..1.0);
            }
            let mean_x: Vec<f64> = cell.sx.iter().map(|s| s / cell.n).collect();
            let c = project(&mut slope, &mean_x, cell.sy / cell.n, problem);
            slopes.extend_from_slice(&slope);
            intercepts.push(c);
        } else {
            slopes.extend_from_slice(&slope);
            intercepts.push(cap_intercept(&slope, y_mean, problem));
        }
    }
    while intercepts.len() < k {
        slopes.extend_from_within(..d);
        intercepts.push(intercepts[0]);
    }
    Pieces { slopes, intercepts }
}

fn alternate(problem: &RegressionProblem, scale: &[f64], mut pieces: Pieces) -> RestartRun {
    let d = problem.dim;
    let m_total = problem.len();
    let k = pieces.len();
    let lambda = RIDGE_PER_SAMPLE * m_total as f64;
    let mut assign = vec![usize::MAX; m_total];
    let mut resid = vec![0.0; m_total];
    let mut cells: Vec<Moments> = (0..k).map(|_| Moments::new(d)).collect();
    let mut best = RestartRun { pieces: pieces.clone(), sse: f64::INFINITY, sweeps: 0 };
    let mut prev_sse = f64::INFINITY;

    for sweep in 0..=problem.max_sweeps {
        let mut sse = 0.0;
        let mut changed = false;
        for m in 0..m_total {
            let (v, arg) = pieces.eval(d, problem.input(m));
            let r = problem.targets[m] - v;
            sse += r * r;
            resid[m] = r;
            if assign[m] != arg {
                assign[m] = arg;
                changed = true;
            }
        }
        if sse < best.sse * (1.0 - problem.tolerance) {
            best = RestartRun { pieces: pieces.clone(), sse, sweeps: sweep };
        } else if sse < best.sse {
            best = RestartRun { pieces: pieces.clone(), sse, sweeps: best.sweeps };
        }
        // respawned pieces can keep the partition cycling; give up once the
        // best risk has stalled
        if sweep == problem.max_sweeps || !changed || sweep >= best.sweeps + STALL_SWEEPS {
            break;
        }
        if prev_sse.is_finite() && (prev_sse - sse).abs() <= problem.tolerance * prev_sse {
            break;
        }
        prev_sse = sse;

        cells.iter_mut().for_each(Moments::reset);
        for m in 0..m_total {
            cells[assign[m]].add(problem.input(m), problem.targets[m]);
        }
        let mut empty = Vec::new();
        for (j, cell) in cells.iter().enumerate() {
            if cell.n > 0.0 {
                let slope = &mut pieces.slopes[j * d..(j + 1) * d];
                pieces.intercepts[j] = cell.solve_projected(slope, lambda, problem);
            } else {
                empty.push(j);
            }
        }
        for j in empty {
            respawn(problem, &mut pieces, j, scale, &mut resid);
        }
    }
    best
}

/// Re-seed an empty piece with a local least-squares fit around the sample
/// with the largest positive residual.
fn respawn(problem: &RegressionProblem, pieces: &mut Pieces, j: usize, scale: &[f64], resid: &mut [f64]) {
    let d = problem.dim;
    let m_total = problem.len();
    let (worst, r) = resid.iter().copied().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap_or((0, 0.0));
    if !(r > 0.0) {
        // nothing lies above the fit: park the piece on top of piece 0
        if j != 0 {
            pieces.slopes.copy_within(0..d, j * d);
            pieces.intercepts[j] = pieces.intercepts[0];
        }
        return;
    }
    resid[worst] = f64::NEG_INFINITY;
    let xw = problem.input(worst);
    let mut dist: Vec<(f64, usize)> = (0..m_total)
        .map(|m| {
            let x = problem.input(m);
            ((0..d).map(|i| ((x[i] - xw[i]) / scale[i]).powi(2)).sum(), m)
        })
        .collect();
    let n_local = (m_total / (2 * pieces.len())).max(2 * (d + 1)).min(m_total);
    if n_local < m_total {
        dist.select_nth_unstable_by(n_local - 1, |a, b| a.0.total_cmp(&b.0));
    }
    let mut local = Moments::new(d);
    for &(_, m) in &dist[..n_local] {
        local.add(problem.input(m), problem.targets[m]);
    }
    let lambda = RIDGE_PER_SAMPLE * m_total as f64;
    let slope = &mut pieces.slopes[j * d..(j + 1) * d];
    pieces.intercepts[j] = local.solve_projected(slope, lambda, problem);
}

/// Drops pieces that maximize at no sample (keeps at least one).
fn prune_inactive(problem: &RegressionProblem, pieces: &Pieces) -> MaxAffineFn {
    let d = problem.dim;
    let mut used = vec![false; pieces.len()];
    for m in 0..problem.len() {
        used[pieces.eval(d, problem.input(m)).1] = true;
    }
    let mut slopes = Vec::new();
    let mut intercepts = Vec::new();
    for (k, &u) in used.iter().enumerate() {
        if u {
            slopes.extend_from_slice(&pieces.slopes[k * d..(k + 1) * d]);
            intercepts.push(pieces.intercepts[k]);
        }
    }
    MaxAffineFn::from_parts(d, slopes, intercepts, problem.lipschitz, problem.upper_bound)
}
