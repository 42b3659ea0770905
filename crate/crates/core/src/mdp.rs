//! Household decision process: states, feasible savings intervals, offline
//! datasets, concave Q-functions, and sampled Bellman targets.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::economy::MeanFieldTerm;
use crate::error::{Error, Result};
use crate::shape_reg::{MaxAffineFn, RegressionProblem};

/// Capital holding and income level of one household.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HouseholdState {
    pub capital: f64,
    pub level: usize,
}

impl HouseholdState {
    pub fn new(capital: f64, level: usize) -> Self {
        Self { capital, level }
    }
}

/// Closed savings interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleInterval {
    pub lo: f64,
    pub hi: f64,
}

impl FeasibleInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::EmptyInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn point(c: f64) -> Self {
        Self { lo: c, hi: c }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi)
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, a: f64) -> bool {
        self.lo <= a && a <= self.hi
    }
}

/// State-dependent feasible action sets `Γ(s)`.
pub trait Feasibility: Sync {
    fn interval(&self, s: &HouseholdState) -> FeasibleInterval;
}

impl<F> Feasibility for F
where
    F: Fn(&HouseholdState) -> FeasibleInterval + Sync,
{
    fn interval(&self, s: &HouseholdState) -> FeasibleInterval {
        self(s)
    }
}

/// One offline transition `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSample {
    pub state: HouseholdState,
    pub action: f64,
    pub reward: f64,
    pub next_state: HouseholdState,
}

/// Offline transitions collected under one mean-field term.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mean_field: MeanFieldTerm,
    pub samples: Vec<TransitionSample>,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRow {
    b: f64,
    w: usize,
    a: f64,
    r: f64,
    b_next: f64,
    w_next: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// CSV dump with columns `b,w,a,r,b_next,w_next`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        for t in &self.samples {
            out.serialize(DatasetRow {
                b: t.state.capital,
                w: t.state.level,
                a: t.action,
                r: t.reward,
                b_next: t.next_state.capital,
                w_next: t.next_state.level,
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, mean_field: MeanFieldTerm, seed: u64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let samples = rdr
            .deserialize::<DatasetRow>()
            .map(|row| {
                row.map(|r| TransitionSample {
                    state: HouseholdState::new(r.b, r.w),
                    action: r.a,
                    reward: r.r,
                    next_state: HouseholdState::new(r.b_next, r.w_next),
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { mean_field, samples, seed })
    }
}

/// Restriction of a clamped concave piecewise-linear Q to one state:
/// `a ↦ clamp(bound - max_k (slope_k·a + offset_k), 0, bound)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcaveSlice {
    pub bound: f64,
    /// `(slope_k, offset_k)` of the convex part.
    pub lines: Vec<(f64, f64)>,
}

impl ConcaveSlice {
    /// Unclamped concave value `bound - max_k(...)`.
    #[inline]
    pub fn raw(&self, a: f64) -> f64 {
        let g = self.lines.iter().fold(f64::NEG_INFINITY, |m, (p, q)| m.max(p * a + q));
        self.bound - g
    }

    #[inline]
    pub fn value(&self, a: f64) -> f64 {
        self.raw(a).clamp(0.0, self.bound)
    }

    /// Maximum of [`raw`](Self::raw) on `[lo, hi]`, attained at an endpoint
    /// or a breakpoint of the envelope.
    pub fn max_raw(&self, lo: f64, hi: f64) -> f64 {
        self.envelope(lo, hi)
            .iter()
            .map(|(x0, x1, _)| self.raw(*x0).max(self.raw(*x1)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Breakpoints of the convex part on `[lo, hi]` as `(x0, x1, line)` segments.
    pub fn envelope(&self, lo: f64, hi: f64) -> Vec<(f64, f64, (f64, f64))> {
        let pick_at = |x: f64| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (k, (p, q)) in self.lines.iter().enumerate() {
                let v = p * x + q;
                if v > best_v || (v == best_v && *p > self.lines[best].0) {
                    best = k;
                    best_v = v;
                }
            }
            best
        };
        let mut segments = Vec::new();
        let mut x = lo;
        let mut cur = pick_at(lo);
        loop {
            let (pc, qc) = self.lines[cur];
            let mut next: Option<(f64, usize)> = None;
            for (j, &(pj, qj)) in self.lines.iter().enumerate() {
                if pj <= pc {
                    continue;
                }
                let xj = (qc - qj) / (pj - pc);
                if xj < hi && xj >= x {
                    let better = match next {
                        None => true,
                        Some((xn, n)) => xj < xn || (xj == xn && pj > self.lines[n].0),
                    };
                    if better {
                        next = Some((xj, j));
                    }
                }
            }
            match next {
                Some((xn, j)) => {
                    if xn > x {
                        segments.push((x, xn, (pc, qc)));
                    }
                    x = xn;
                    cur = j;
                }
                None => {
                    segments.push((x, hi, (pc, qc)));
                    break;
                }
            }
        }
        segments
    }
}

/// Action-value functions `Q(s, a)`.
pub trait ActionValue: Sync {
    fn value(&self, s: &HouseholdState, a: f64) -> f64;

    /// Piecewise-linear restriction to `s`, when available.
    fn concave_slice(&self, _s: &HouseholdState) -> Option<ConcaveSlice> {
        None
    }
}

impl<F> ActionValue for F
where
    F: Fn(&HouseholdState, f64) -> f64 + Sync,
{
    fn value(&self, s: &HouseholdState, a: f64) -> f64 {
        self(s, a)
    }
}

/// How the convex parts of a [`ConcaveQ`] are organized.
#[derive(Debug, Clone, PartialEq)]
pub enum QLayout {
    /// One fit per income level over `(b, a)`.
    PerLevel(Vec<MaxAffineFn>),
    /// One fit over `(b, level, a)`.
    Joint(MaxAffineFn),
}

/// `Q(b, w, a) = clamp(B - f(b, w, a), 0, B)` with `f` max-affine.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcaveQ {
    layout: QLayout,
    bound: f64,
}

impl ConcaveQ {
    pub fn per_level(fits: Vec<MaxAffineFn>, bound: f64) -> Result<Self> {
        if fits.is_empty() {
            return Err(Error::InvariantViolation("no income levels".into()));
        }
        if let Some(f) = fits.iter().find(|f| f.dim() != 2) {
            return Err(Error::DimensionMismatch { expected: 2, got: f.dim() });
        }
        Ok(Self { layout: QLayout::PerLevel(fits), bound })
    }

    pub fn joint(fit: MaxAffineFn, bound: f64) -> Result<Self> {
        if fit.dim() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: fit.dim() });
        }
        Ok(Self { layout: QLayout::Joint(fit), bound })
    }

    /// `Q ≡ 0` (every convex part is the constant `B`).
    pub fn zero(levels: usize, joint: bool, bound: f64, lipschitz: f64) -> Self {
        let layout = if joint {
            QLayout::Joint(MaxAffineFn::constant(3, bound, lipschitz, bound).expect("valid bounds"))
        } else {
            QLayout::PerLevel(
                (0..levels.max(1))
                    .map(|_| MaxAffineFn::constant(2, bound, lipschitz, bound).expect("valid bounds"))
                    .collect(),
            )
        };
        Self { layout, bound }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn layout(&self) -> &QLayout {
        &self.layout
    }

    pub fn is_joint(&self) -> bool {
        matches!(self.layout, QLayout::Joint(_))
    }

    /// Convex part for a level (the shared fit in the joint layout).
    pub fn convex_part(&self, level: usize) -> &MaxAffineFn {
        match &self.layout {
            QLayout::PerLevel(fits) => &fits[level],
            QLayout::Joint(f) => f,
        }
    }

    #[inline]
    fn convex_value(&self, s: &HouseholdState, a: f64) -> f64 {
        match &self.layout {
            QLayout::PerLevel(fits) => fits[s.level].value(&[s.capital, a]),
            QLayout::Joint(f) => f.value(&[s.capital, s.level as f64, a]),
        }
    }

    pub fn slice(&self, s: &HouseholdState) -> ConcaveSlice {
        let lines = match &self.layout {
            QLayout::PerLevel(fits) => fits[s.level].pieces().map(|(al, c)| (al[1], al[0] * s.capital + c)).collect(),
            QLayout::Joint(f) => {
                f.pieces().map(|(al, c)| (al[2], al[0] * s.capital + al[1] * s.level as f64 + c)).collect()
            }
        };
        ConcaveSlice { bound: self.bound, lines }
    }
}

impl ActionValue for ConcaveQ {
    #[inline]
    fn value(&self, s: &HouseholdState, a: f64) -> f64 {
        (self.bound - self.convex_value(s, a)).clamp(0.0, self.bound)
    }

    fn concave_slice(&self, s: &HouseholdState) -> Option<ConcaveSlice> {
        Some(self.slice(s))
    }
}

const GOLDEN_MAX_ITERS: usize = 80;
const GOLDEN_TOL: f64 = 1e-8;

/// Golden-section maximization of a concave function on `[lo, hi]`, also
/// checking both endpoints.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return f(lo);
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..GOLDEN_MAX_ITERS {
        if b - a <= GOLDEN_TOL {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    f1.max(f2).max(f(0.5 * (a + b))).max(f(lo)).max(f(hi))
}

/// `(JQ)(s) = max_{a ∈ Γ(s)} Q(s, a)`.
pub fn greedy_value<Q: ActionValue + ?Sized>(q: &Q, s: &HouseholdState, interval: FeasibleInterval) -> Result<f64> {
    if interval.is_empty() {
        return Err(Error::EmptyInterval { lo: interval.lo, hi: interval.hi });
    }
    Ok(match q.concave_slice(s) {
        // clamping is monotone, so maximize the unclamped part
        Some(slice) => slice.max_raw(interval.lo, interval.hi).clamp(0.0, slice.bound),
        None => golden_max(|a| q.value(s, a), interval.lo, interval.hi),
    })
}

/// Sampled Bellman target `clamp(r + γ (JQ)(s'), 0, B)` for one transition.
pub fn bellman_target<Q, F>(sample: &TransitionSample, q: &Q, discount: f64, bound: f64, feasibility: &F) -> f64
where
    Q: ActionValue + ?Sized,
    F: Feasibility + ?Sized,
{
    let next = &sample.next_state;
    let jq = greedy_value(q, next, feasibility.interval(next)).unwrap_or(0.0);
    (sample.reward + discount * jq).clamp(0.0, bound)
}

/// Bellman targets for every sample, in dataset order.
pub fn bellman_target_values<F: Feasibility>(data: &Dataset, q: &ConcaveQ, discount: f64, feasibility: &F) -> Vec<f64> {
    data.samples.par_iter().map(|t| bellman_target(t, q, discount, q.bound(), feasibility)).collect()
}

/// Regression problems for the convex parts `B - T Q`: one per income level
/// with inputs `(b, a)`, or a single one with inputs `(b, level, a)` when
/// `joint` is set. Levels without samples yield an empty problem.
pub fn bellman_targets<F: Feasibility>(
    data: &Dataset,
    q: &ConcaveQ,
    discount: f64,
    feasibility: &F,
    levels: usize,
    joint: bool,
    lipschitz: f64,
) -> Vec<RegressionProblem> {
    let bound = q.bound();
    let targets = bellman_target_values(data, q, discount, feasibility);
    if joint {
        let mut inputs = Vec::with_capacity(3 * data.len());
        for t in &data.samples {
            inputs.extend_from_slice(&[t.state.capital, t.state.level as f64, t.action]);
        }
        let ys = targets.iter().map(|y| bound - y).collect();
        return vec![RegressionProblem::new(3, inputs, ys, 1, lipschitz, bound)];
    }
    let mut inputs = vec![Vec::new(); levels];
    let mut ys = vec![Vec::new(); levels];
    for (t, y) in data.samples.iter().zip(&targets) {
        let w = t.state.level;
        inputs[w].extend_from_slice(&[t.state.capital, t.action]);
        ys[w].push(bound - y);
    }
    inputs.into_iter().zip(ys).map(|(x, y)| RegressionProblem::new(2, x, y, 1, lipschitz, bound)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(_: &HouseholdState) -> FeasibleInterval {
        FeasibleInterval { lo: 0.0, hi: 1.0 }
    }

    #[test]
    fn tent_peak() {
        let q = |_: &HouseholdState, a: f64| a.min(1.0 - a);
        let s = HouseholdState::new(0.0, 0);
        let v = greedy_value(&q, &s, FeasibleInterval::new(0.0, 1.0).unwrap()).unwrap();
        assert!((v - 0.5).abs() < 1e-8);
    }

    #[test]
    fn boundary_maximizer() {
        let q = |_: &HouseholdState, a: f64| 2.0 * a;
        let s = HouseholdState::new(0.0, 0);
        let v = greedy_value(&q, &s, FeasibleInterval::new(0.0, 0.7).unwrap()).unwrap();
        assert_eq!(v, 1.4);
    }

    #[test]
    fn empty_interval_is_an_error() {
        let q = |_: &HouseholdState, a: f64| a;
        let s = HouseholdState::new(0.0, 0);
        let bad = FeasibleInterval { lo: 1.0, hi: 0.0 };
        assert!(matches!(greedy_value(&q, &s, bad), Err(Error::EmptyInterval { .. })));
        assert!(FeasibleInterval::new(1.0, 0.0).is_err());
    }

    fn random_q(rng: &mut ChaCha8Rng, pieces: usize, bound: f64) -> ConcaveQ {
        let fits = (0..2)
            .map(|_| {
                let p = (0..pieces)
                    .map(|_| (vec![rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0)], rng.gen_range(2.0..6.0)))
                    .collect();
                MaxAffineFn::new(2, p, 1.0, bound).unwrap()
            })
            .collect();
        ConcaveQ::per_level(fits, bound).unwrap()
    }

    #[test]
    fn greedy_matches_dense_grid_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let q = random_q(&mut rng, 5, 10.0);
            let s = HouseholdState::new(rng.gen_range(0.0..5.0), rng.gen_range(0..2));
            let iv = FeasibleInterval::new(0.0, rng.gen_range(0.5..5.0)).unwrap();
            // coarse scan, then a zoomed scan around the coarse winner
            let n = 100_000;
            let h = iv.width() / n as f64;
            let (best_i, _) = (0..=n)
                .map(|i| (i, q.value(&s, iv.lo + h * i as f64)))
                .fold((0, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
            let centre = iv.lo + h * best_i as f64;
            let (lo, hi) = ((centre - h).max(iv.lo), (centre + h).min(iv.hi));
            let scan =
                (0..=n).map(|i| q.value(&s, lo + (hi - lo) * i as f64 / n as f64)).fold(f64::NEG_INFINITY, f64::max);
            let v = greedy_value(&q, &s, iv).unwrap();
            assert!((v - scan).abs() <= 1e-6, "{v} vs {scan}");
            assert!((0.0..=10.0).contains(&v));
        }
    }

    #[test]
    fn slice_agrees_with_pointwise_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_q(&mut rng, 4, 10.0);
        let s = HouseholdState::new(2.5, 1);
        let slice = q.slice(&s);
        for i in 0..50 {
            let a = i as f64 * 0.1;
            assert!((slice.value(a) - q.value(&s, a)).abs() < 1e-12);
        }
        let env = slice.envelope(0.0, 5.0);
        assert_eq!(env.first().unwrap().0, 0.0);
        assert_eq!(env.last().unwrap().1, 5.0);
        for (x0, x1, (p, c)) in env {
            let mid = 0.5 * (x0 + x1);
            assert!((slice.bound - (p * mid + c) - slice.raw(mid)).abs() < 1e-12);
        }
    }

    fn sample_at(b: f64, a: f64, r: f64, w: usize, w_next: usize) -> TransitionSample {
        TransitionSample {
            state: HouseholdState::new(b, w),
            action: a,
            reward: r,
            next_state: HouseholdState::new(a, w_next),
        }
    }

    #[test]
    fn target_formula() {
        // greedy value 2 everywhere via a constant Q
        let q = |_: &HouseholdState, _: f64| 2.0;
        let t = sample_at(0.3, 0.5, 0.5, 0, 0);
        assert!((bellman_target(&t, &q, 0.95, 20.0, &unit) - 2.4).abs() < 1e-12);
        assert_eq!(bellman_target(&t, &q, 0.0, 20.0, &unit), 0.5);
    }

    #[test]
    fn constant_q_targets() {
        let bound = 20.0;
        let c = 3.0;
        let q = ConcaveQ::per_level(vec![MaxAffineFn::constant(2, bound - c, 1.0, bound).unwrap(); 2], bound).unwrap();
        let data = Dataset {
            mean_field: MeanFieldTerm::new(1.0, 0.1),
            samples: vec![sample_at(0.1, 0.2, 0.3, 0, 1), sample_at(0.5, 0.9, 0.7, 1, 1)],
            seed: 0,
        };
        let ys = bellman_target_values(&data, &q, 0.9, &unit);
        assert!((ys[0] - (0.3 + 0.9 * c)).abs() < 1e-12);
        assert!((ys[1] - (0.7 + 0.9 * c)).abs() < 1e-12);
        let problems = bellman_targets(&data, &q, 0.9, &unit, 2, false, 1.0);
        assert_eq!(problems.len(), 2);
        assert_eq!(problems[0].len(), 1);
        assert!((problems[1].targets[0] - (bound - ys[1])).abs() < 1e-12);
        assert_eq!(problems[1].input(0), &[0.5, 0.9]);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let data = Dataset {
            mean_field: MeanFieldTerm::new(1.0, 0.1),
            samples: vec![sample_at(0.125, 0.75, 0.3, 0, 1), sample_at(19.5, 3.0, 1.0 / 3.0, 1, 0)],
            seed: 4,
        };
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("b,w,a,r,b_next,w_next\n"));
        let back = Dataset::read_csv(buf.as_slice(), data.mean_field, 4).unwrap();
        assert_eq!(back, data);
    }
}
