//! Entropy-regularized (Gibbs) policies on feasible savings intervals.
//!
//! The Gibbs policy of `Q` at temperature `ζ` has density
//! `exp(Q(s, a) / ζ) / Z(s)` on `Γ(s)`. When `Q` exposes a concave
//! piecewise-linear slice the density is piecewise exponential and is
//! integrated and inverted in closed form; otherwise composite Simpson
//! quadrature on a `G`-cell grid is used, with inverse-CDF sampling on the
//! same grid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{ActionValue, ConcaveSlice, Feasibility, FeasibleInterval, HouseholdState};

/// Default number of quadrature cells per interval.
pub const DEFAULT_GRID: usize = 256;

/// A stochastic savings rule.
pub trait Policy: Sync {
    /// Draws an action for state `s`.
    fn sample<R: Rng + ?Sized>(&self, s: &HouseholdState, rng: &mut R) -> Result<f64>;
}

/// A policy with a density on its support.
pub trait DensityPolicy: Policy {
    fn support(&self, s: &HouseholdState) -> FeasibleInterval;

    /// Densities at several actions of one state; zero off the support.
    /// A point support carries unit density at its point.
    fn densities(&self, s: &HouseholdState, actions: &[f64]) -> Result<Vec<f64>>;
}

/// Gibbs policy `π_Q(a | s) ∝ exp(Q(s, a) / ζ)` on `Γ(s)`.
#[derive(Debug, Clone)]
pub struct GibbsPolicy<Q, F> {
    q: Q,
    feasibility: F,
    zeta: f64,
    grid: usize,
}

impl<Q: ActionValue, F: Feasibility> GibbsPolicy<Q, F> {
    pub fn new(q: Q, feasibility: F, zeta: f64) -> Result<Self> {
        Self::with_grid(q, feasibility, zeta, DEFAULT_GRID)
    }

    /// `grid` must be even and at least 16.
    pub fn with_grid(q: Q, feasibility: F, zeta: f64, grid: usize) -> Result<Self> {
        if !(zeta > 0.0 && zeta.is_finite()) {
            return Err(Error::Config(format!("regularization must be > 0, got {zeta}")));
        }
        if grid < 16 || !grid.is_multiple_of(2) {
            return Err(Error::Config(format!("quadrature grid must be even and >= 16, got {grid}")));
        }
        Ok(Self { q, feasibility, zeta, grid })
    }

    pub fn q(&self) -> &Q {
        &self.q
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn feasibility(&self) -> &F {
        &self.feasibility
    }

    /// Normalized action law at `s`.
    pub fn law(&self, s: &HouseholdState) -> Result<ActionLaw> {
        let iv = self.feasibility.interval(s);
        if iv.is_empty() {
            return Err(Error::EmptyInterval { lo: iv.lo, hi: iv.hi });
        }
        if iv.is_point() {
            return Ok(ActionLaw::Point(iv.lo));
        }
        Ok(match self.q.concave_slice(s) {
            Some(slice) => ActionLaw::Exponential(ExpSegments::from_slice(&slice, iv, self.zeta)),
            None => ActionLaw::Grid(GridLaw::new(|a| self.q.value(s, a), iv, self.zeta, self.grid)),
        })
    }

    /// `exp(Q(s, a) / ζ) / Z(s)`.
    pub fn density(&self, s: &HouseholdState, a: f64) -> Result<f64> {
        let law = self.law(s)?;
        let iv = law.support();
        if !iv.contains(a) {
            return Err(Error::OutOfFeasible { action: a, lo: iv.lo, hi: iv.hi });
        }
        Ok(self.density_in(&law, s, a))
    }

    fn density_in(&self, law: &ActionLaw, s: &HouseholdState, a: f64) -> f64 {
        match law {
            ActionLaw::Grid(g) => g.density_at(self.q.value(s, a)),
            other => other.density(a),
        }
    }

    /// `P(a' ≤ a | s)`.
    pub fn cdf(&self, s: &HouseholdState, a: f64) -> Result<f64> {
        let law = self.law(s)?;
        Ok(match &law {
            ActionLaw::Grid(g) => {
                if a <= g.lo {
                    0.0
                } else if a >= g.hi {
                    1.0
                } else {
                    let part = simpson(|x| g.density_at(self.q.value(s, x)), g.lo, a, self.grid);
                    part.clamp(0.0, 1.0)
                }
            }
            other => other.cdf(a),
        })
    }

    /// `log Z(s) = log ∫_Γ(s) exp(Q(s, a) / ζ) da`.
    pub fn log_normalizer(&self, s: &HouseholdState) -> Result<f64> {
        match self.law(s)? {
            ActionLaw::Point(_) => Ok(0.0),
            ActionLaw::Uniform { lo, hi } => Ok((hi - lo).ln()),
            ActionLaw::Exponential(e) => Ok(e.shift + e.total.ln()),
            ActionLaw::Grid(g) => Ok(g.shift + g.z.ln()),
        }
    }

    /// Optimal regularized objective `max_u ∫ u Q - ζ ∫ u log u = ζ log Z(s)`.
    pub fn regularized_value(&self, s: &HouseholdState) -> Result<f64> {
        Ok(self.zeta * self.log_normalizer(s)?)
    }

    /// `E[a | s]` by Simpson quadrature.
    pub fn mean(&self, s: &HouseholdState) -> Result<f64> {
        let law = self.law(s)?;
        let iv = law.support();
        if iv.is_point() {
            return Ok(iv.lo);
        }
        Ok(simpson(|a| a * self.density_in(&law, s, a), iv.lo, iv.hi, 4 * self.grid))
    }
}

impl<Q: ActionValue, F: Feasibility> Policy for GibbsPolicy<Q, F> {
    fn sample<R: Rng + ?Sized>(&self, s: &HouseholdState, rng: &mut R) -> Result<f64> {
        Ok(self.law(s)?.sample(rng))
    }
}

impl<Q: ActionValue, F: Feasibility> DensityPolicy for GibbsPolicy<Q, F> {
    fn support(&self, s: &HouseholdState) -> FeasibleInterval {
        self.feasibility.interval(s)
    }

    fn densities(&self, s: &HouseholdState, actions: &[f64]) -> Result<Vec<f64>> {
        let law = self.law(s)?;
        let iv = law.support();
        Ok(actions.iter().map(|&a| if iv.contains(a) { self.density_in(&law, s, a) } else { 0.0 }).collect())
    }
}

/// `Unif(Γ(s))`.
#[derive(Debug, Clone)]
pub struct UniformPolicy<F> {
    feasibility: F,
}

/// The uniform policy on the feasible intervals of `feasibility`.
pub fn uniform_policy<F: Feasibility>(feasibility: F) -> UniformPolicy<F> {
    UniformPolicy { feasibility }
}

impl<F: Feasibility> UniformPolicy<F> {
    pub fn law(&self, s: &HouseholdState) -> Result<ActionLaw> {
        let iv = self.feasibility.interval(s);
        if iv.is_empty() {
            return Err(Error::EmptyInterval { lo: iv.lo, hi: iv.hi });
        }
        Ok(if iv.is_point() { ActionLaw::Point(iv.lo) } else { ActionLaw::Uniform { lo: iv.lo, hi: iv.hi } })
    }

    pub fn density(&self, s: &HouseholdState, a: f64) -> Result<f64> {
        let law = self.law(s)?;
        let iv = law.support();
        if !iv.contains(a) {
            return Err(Error::OutOfFeasible { action: a, lo: iv.lo, hi: iv.hi });
        }
        Ok(law.density(a))
    }
}

impl<F: Feasibility> Policy for UniformPolicy<F> {
    fn sample<R: Rng + ?Sized>(&self, s: &HouseholdState, rng: &mut R) -> Result<f64> {
        Ok(self.law(s)?.sample(rng))
    }
}

impl<F: Feasibility> DensityPolicy for UniformPolicy<F> {
    fn support(&self, s: &HouseholdState) -> FeasibleInterval {
        self.feasibility.interval(s)
    }

    fn densities(&self, s: &HouseholdState, actions: &[f64]) -> Result<Vec<f64>> {
        let law = self.law(s)?;
        let iv = law.support();
        Ok(actions.iter().map(|&a| if iv.contains(a) { law.density(a) } else { 0.0 }).collect())
    }
}

/// `∫ sup_a |π(a|s) - π'(a|s)| dν̄(s)` with `ν̄` the empirical measure of
/// `states` and the sup taken over `grid + 1` points spanning the union of
/// both supports.
pub fn policy_distance<P1, P2>(p: &P1, q: &P2, states: &[HouseholdState], grid: usize) -> Result<f64>
where
    P1: DensityPolicy + ?Sized,
    P2: DensityPolicy + ?Sized,
{
    if states.is_empty() {
        return Ok(0.0);
    }
    let grid = grid.max(1);
    let mut total = 0.0;
    for s in states {
        let (a, b) = (p.support(s), q.support(s));
        let lo = a.lo.min(b.lo);
        let hi = a.hi.max(b.hi);
        let mut pts: Vec<f64> = (0..=grid).map(|i| lo + (hi - lo) * i as f64 / grid as f64).collect();
        // support endpoints carry the jumps of uniform-like densities
        pts.extend_from_slice(&[a.lo, a.hi, b.lo, b.hi]);
        let dp = p.densities(s, &pts)?;
        let dq = q.densities(s, &pts)?;
        total += dp.iter().zip(&dq).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    }
    Ok(total / states.len() as f64)
}

/// Normalized distribution of actions at one state.
#[derive(Debug, Clone)]
pub enum ActionLaw {
    Point(f64),
    Uniform { lo: f64, hi: f64 },
    Exponential(ExpSegments),
    Grid(GridLaw),
}

impl ActionLaw {
    pub fn support(&self) -> FeasibleInterval {
        match self {
            ActionLaw::Point(c) => FeasibleInterval::point(*c),
            ActionLaw::Uniform { lo, hi } => FeasibleInterval { lo: *lo, hi: *hi },
            ActionLaw::Exponential(e) => FeasibleInterval { lo: e.lo(), hi: e.hi() },
            ActionLaw::Grid(g) => FeasibleInterval { lo: g.lo, hi: g.hi },
        }
    }

    /// Density on the support. For a grid law this interpolates the log
    /// density linearly between nodes.
    pub fn density(&self, a: f64) -> f64 {
        match self {
            ActionLaw::Point(c) => {
                if a == *c {
                    1.0
                } else {
                    0.0
                }
            }
            ActionLaw::Uniform { lo, hi } => 1.0 / (hi - lo),
            ActionLaw::Exponential(e) => e.density(a),
            ActionLaw::Grid(g) => g.interpolated_density(a),
        }
    }

    pub fn cdf(&self, a: f64) -> f64 {
        match self {
            ActionLaw::Point(c) => {
                if a >= *c {
                    1.0
                } else {
                    0.0
                }
            }
            ActionLaw::Uniform { lo, hi } => ((a - lo) / (hi - lo)).clamp(0.0, 1.0),
            ActionLaw::Exponential(e) => e.cdf(a),
            ActionLaw::Grid(g) => g.sampling_cdf(a),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ActionLaw::Point(c) => *c,
            ActionLaw::Uniform { lo, hi } => (lo + rng.gen::<f64>() * (hi - lo)).min(*hi),
            ActionLaw::Exponential(e) => e.sample(rng.gen::<f64>(), rng.gen::<f64>()),
            ActionLaw::Grid(g) => g.sample(rng.gen::<f64>(), rng.gen::<f64>()),
        }
    }
}

/// `∫_0^t exp(v + σ x) dx` written as `exp(v_max) · t · φ(|σ| t)` with
/// `φ(x) = (1 - e^{-x}) / x`, so it never overflows once `v_max ≤ 0`.
#[inline]
fn exp_integral(v_start: f64, sigma: f64, t: f64) -> f64 {
    let v_max = v_start.max(v_start + sigma * t);
    let x = sigma.abs() * t;
    let phi = if x < 1e-8 { 1.0 - 0.5 * x } else { -(-x).exp_m1() / x };
    v_max.exp() * t * phi
}

/// One piece of a piecewise-exponential density: `log` density is affine on
/// `[x0, x1]`, from `v0` to `v1` (shifted by the global maximum).
#[derive(Debug, Clone, Copy)]
struct ExpPiece {
    x0: f64,
    x1: f64,
    v0: f64,
    v1: f64,
}

impl ExpPiece {
    fn sigma(&self) -> f64 {
        (self.v1 - self.v0) / (self.x1 - self.x0)
    }

    /// Point with `u` of this piece's mass to its left.
    fn inverse(&self, u: f64) -> f64 {
        let width = self.x1 - self.x0;
        let sigma = self.sigma();
        let k = sigma.abs();
        if k * width < 1e-12 {
            return self.x0 + u * width;
        }
        // truncated exponential anchored at the heavier end
        let c = -(-k * width).exp_m1();
        let x = if sigma > 0.0 {
            let r = -(-(1.0 - u) * c).ln_1p() / k;
            self.x1 - r
        } else {
            let t = -(-u * c).ln_1p() / k;
            self.x0 + t
        };
        x.clamp(self.x0, self.x1)
    }
}

/// Exact Gibbs law of a clamped concave piecewise-linear `Q` slice.
#[derive(Debug, Clone)]
pub struct ExpSegments {
    zeta: f64,
    /// `max Q / ζ` over the interval.
    shift: f64,
    pieces: Vec<ExpPiece>,
    /// Cumulative shifted masses, one per piece.
    cum: Vec<f64>,
    total: f64,
}

impl ExpSegments {
    pub fn from_slice(slice: &ConcaveSlice, iv: FeasibleInterval, zeta: f64) -> Self {
        let bound = slice.bound;
        let mut knots: Vec<(f64, f64)> = Vec::new();
        for (x0, x1, (p, c)) in slice.envelope(iv.lo, iv.hi) {
            let mut cuts = vec![x0, x1];
            if p != 0.0 {
                // raw = B - (p a + c) crosses 0 and B
                for a in [(bound - c) / p, -c / p] {
                    if a > x0 && a < x1 {
                        cuts.push(a);
                    }
                }
            }
            cuts.sort_by(f64::total_cmp);
            for w in cuts.windows(2) {
                if w[1] > w[0] {
                    let q0 = (bound - (p * w[0] + c)).clamp(0.0, bound);
                    let q1 = (bound - (p * w[1] + c)).clamp(0.0, bound);
                    knots.push((w[0], q0));
                    knots.push((w[1], q1));
                }
            }
        }
        let shift = knots.iter().map(|k| k.1).fold(f64::NEG_INFINITY, f64::max) / zeta;
        let mut pieces = Vec::with_capacity(knots.len() / 2);
        let mut cum = Vec::with_capacity(knots.len() / 2);
        let mut total = 0.0;
        for pair in knots.chunks_exact(2) {
            let (x0, q0) = pair[0];
            let (x1, q1) = pair[1];
            let v0 = q0 / zeta - shift;
            let v1 = q1 / zeta - shift;
            let mass = exp_integral(v0, (v1 - v0) / (x1 - x0), x1 - x0);
            total += mass;
            pieces.push(ExpPiece { x0, x1, v0, v1 });
            cum.push(total);
        }
        Self { zeta, shift, pieces, cum, total }
    }

    pub fn lo(&self) -> f64 {
        self.pieces[0].x0
    }

    pub fn hi(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].x1
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    fn locate(&self, a: f64) -> usize {
        self.pieces.partition_point(|p| p.x1 < a).min(self.pieces.len() - 1)
    }

    pub fn density(&self, a: f64) -> f64 {
        if a < self.lo() || a > self.hi() {
            return 0.0;
        }
        let p = &self.pieces[self.locate(a)];
        let v = p.v0 + p.sigma() * (a - p.x0);
        v.exp() / self.total
    }

    pub fn cdf(&self, a: f64) -> f64 {
        if a <= self.lo() {
            return 0.0;
        }
        if a >= self.hi() {
            return 1.0;
        }
        let i = self.locate(a);
        let p = &self.pieces[i];
        let before = if i == 0 { 0.0 } else { self.cum[i - 1] };
        ((before + exp_integral(p.v0, p.sigma(), a - p.x0)) / self.total).clamp(0.0, 1.0)
    }

    /// Inverse CDF, `u1` picks the piece and `u2` the point inside it.
    fn sample(&self, u1: f64, u2: f64) -> f64 {
        let target = u1 * self.total;
        let i = self.cum.partition_point(|c| *c <= target).min(self.pieces.len() - 1);
        self.pieces[i].inverse(u2)
    }
}

/// Gibbs law of a generic `Q` on a `G`-cell grid.
#[derive(Debug, Clone)]
pub struct GridLaw {
    lo: f64,
    hi: f64,
    zeta: f64,
    /// `max Q / ζ` over the grid nodes.
    shift: f64,
    /// Shifted unnormalized weights at the `G + 1` nodes.
    weights: Vec<f64>,
    /// Simpson value of `∫ exp(Q/ζ - shift)`.
    z: f64,
    /// Cumulative trapezoid cell masses, normalized to end at 1.
    cell_cdf: Vec<f64>,
}

impl GridLaw {
    fn new<G: Fn(f64) -> f64>(q: G, iv: FeasibleInterval, zeta: f64, cells: usize) -> Self {
        let h = iv.width() / cells as f64;
        let logs: Vec<f64> = (0..=cells).map(|i| q(iv.lo + h * i as f64) / zeta).collect();
        let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - shift).exp()).collect();
        let z = simpson_weights(&weights, h);
        let mut cell_cdf = Vec::with_capacity(cells);
        let mut acc = 0.0;
        for w in weights.windows(2) {
            acc += 0.5 * (w[0] + w[1]);
            cell_cdf.push(acc);
        }
        for c in &mut cell_cdf {
            *c /= acc;
        }
        Self { lo: iv.lo, hi: iv.hi, zeta, shift, weights, z, cell_cdf }
    }

    fn cells(&self) -> usize {
        self.cell_cdf.len()
    }

    fn step(&self) -> f64 {
        (self.hi - self.lo) / self.cells() as f64
    }

    /// Density given `Q(s, a)`.
    fn density_at(&self, q: f64) -> f64 {
        (q / self.zeta - self.shift).exp() / self.z
    }

    fn interpolated_density(&self, a: f64) -> f64 {
        if a < self.lo || a > self.hi {
            return 0.0;
        }
        let t = ((a - self.lo) / self.step()).min(self.cells() as f64 - 1e-12);
        let i = t.floor() as usize;
        let f = t - i as f64;
        let (w0, w1) = (self.weights[i].ln(), self.weights[i + 1].ln());
        (w0 + f * (w1 - w0)).exp() / self.z
    }

    /// CDF of the sampling distribution (uniform within each cell).
    fn sampling_cdf(&self, a: f64) -> f64 {
        if a <= self.lo {
            return 0.0;
        }
        if a >= self.hi {
            return 1.0;
        }
        let t = (a - self.lo) / self.step();
        let i = (t.floor() as usize).min(self.cells() - 1);
        let before = if i == 0 { 0.0 } else { self.cell_cdf[i - 1] };
        before + (t - i as f64) * (self.cell_cdf[i] - before)
    }

    fn sample(&self, u1: f64, u2: f64) -> f64 {
        let i = self.cell_cdf.partition_point(|c| *c <= u1).min(self.cells() - 1);
        (self.lo + self.step() * (i as f64 + u2)).min(self.hi)
    }
}

/// Composite Simpson rule on `cells` (even) subintervals.
pub fn simpson<G: Fn(f64) -> f64>(f: G, lo: f64, hi: f64, cells: usize) -> f64 {
    let cells = cells + cells % 2;
    let h = (hi - lo) / cells as f64;
    let values: Vec<f64> = (0..=cells).map(|i| f(lo + h * i as f64)).collect();
    simpson_weights(&values, h)
}

fn simpson_weights(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    let mut acc = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}
