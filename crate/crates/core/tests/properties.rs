use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfgham::economy::{Aiyagari, AiyagariConfig, Economy, MeanFieldTerm};
use mfgham::mdp::{
    bellman_target, greedy_value, ConcaveQ, ConcaveSlice, FeasibleInterval, HouseholdState, TransitionSample,
};
use mfgham::policy::{simpson, GibbsPolicy};
use mfgham::shape_reg::{
    fit_affine_ols, fit_max_affine, icnn_to_max_affine, max_affine_to_icnn, MaxAffineFn, RegressionProblem,
};

fn pieces(
    dim: usize,
    k: std::ops::RangeInclusive<usize>,
    slope: f64,
    offset: f64,
) -> impl Strategy<Value = Vec<(Vec<f64>, f64)>> {
    prop::collection::vec((prop::collection::vec(-slope..slope, dim), -offset..offset), k)
}

fn env() -> Aiyagari {
    Aiyagari::new(AiyagariConfig::default()).unwrap()
}

/// Per-level convex parts with values in `[-7, 17]` on the state-action box,
/// so `B - f` never reaches the lower clamp.
fn concave_q(levels: usize) -> impl Strategy<Value = ConcaveQ> {
    prop::collection::vec(pieces(2, 1..=6, 0.3, 5.0), levels).prop_map(|per_level| {
        let b = env().q_bound();
        let fits = per_level.into_iter().map(|p| MaxAffineFn::new(2, p, 0.3, b).unwrap()).collect();
        ConcaveQ::per_level(fits, b).unwrap()
    })
}

fn mean_field() -> impl Strategy<Value = MeanFieldTerm> {
    (0.3..2.0f64, 0.02..0.4f64).prop_map(|(w, r)| MeanFieldTerm::new(w, r))
}

/// `sup_{a ∈ [lo, hi]} |Q1(a) - Q2(a)|` over the kinks of both slices, the
/// clamp crossings and the endpoints, where a piecewise-linear gap peaks.
fn sup_gap(s1: &ConcaveSlice, s2: &ConcaveSlice, lo: f64, hi: f64) -> f64 {
    let mut xs = vec![lo, hi];
    for s in [s1, s2] {
        for (x0, x1, (p, q)) in s.envelope(lo, hi) {
            xs.extend([x0, x1]);
            if p != 0.0 {
                for level in [s.bound, 0.0] {
                    let x = (s.bound - level - q) / p;
                    if x > x0 && x < x1 {
                        xs.push(x);
                    }
                }
            }
        }
    }
    xs.iter().map(|&a| (s1.value(a) - s2.value(a)).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn max_affine_is_midpoint_convex(
        p in pieces(3, 1..=8, 2.0, 3.0),
        x in prop::collection::vec(-5.0..5.0f64, 3),
        y in prop::collection::vec(-5.0..5.0f64, 3),
        lambda in 0.0..1.0f64,
    ) {
        let f = MaxAffineFn::new(3, p, 2.0, 100.0).unwrap();
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let rhs = lambda * f.value(&x) + (1.0 - lambda) * f.value(&y);
        prop_assert!(f.value(&z) <= rhs + 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn icnn_round_trip_is_exact(p in pieces(2, 1..=6, 1.0, 1.0), probes in prop::collection::vec((-4.0..4.0f64, -4.0..4.0f64), 50)) {
        let f = MaxAffineFn::new(2, p, 1.0, 10.0).unwrap();
        let net = max_affine_to_icnn(&f);
        let back = icnn_to_max_affine(&net).unwrap();
        for (a, b) in probes {
            let x = [a, b];
            let rectified = f.value(&x).max(0.0);
            prop_assert!((net.eval(&x).unwrap() - rectified).abs() <= 1e-10);
            prop_assert!((back.value(&x) - rectified).abs() <= 1e-10);
        }
    }

    #[test]
    fn text_format_round_trips(p in pieces(2, 1..=6, 1.0, 1.0)) {
        let f = MaxAffineFn::new(2, p, 1.0, 10.0).unwrap();
        prop_assert_eq!(MaxAffineFn::from_text(&f.to_text()).unwrap(), f);
    }

    #[test]
    fn bellman_targets_are_monotone_and_contract(
        q1 in concave_q(2),
        shift in -3.0..3.0f64,
        q2 in concave_q(2),
        z in mean_field(),
        b in 0.0..20.0f64,
        level in 0usize..2,
        frac in 0.0..1.0f64,
        next_level in 0usize..2,
    ) {
        let env = env();
        let budget = env.budget(&z);
        let state = HouseholdState::new(b, level);
        let iv = env.feasible(&z, &state);
        let action = iv.lo + frac * iv.width();
        let sample = TransitionSample {
            state,
            action,
            reward: env.reward_unchecked(&z, &state, action),
            next_state: HouseholdState::new(action, next_level),
        };
        let gamma = env.discount();
        let bound = env.q_bound();
        let target = |q: &ConcaveQ| bellman_target(&sample, q, gamma, bound, &budget);

        // Q1 + |shift| dominates Q1 pointwise
        let lifted = |q: &ConcaveQ, c: f64| {
            let fits = (0..2).map(|w| {
                let f = q.convex_part(w);
                let p = f.pieces().map(|(a, k)| (a.to_vec(), k - c)).collect();
                MaxAffineFn::new(2, p, f.lipschitz(), f.upper_bound()).unwrap()
            }).collect();
            ConcaveQ::per_level(fits, q.bound()).unwrap()
        };
        let upper = lifted(&q1, shift.abs());
        prop_assert!(target(&q1) <= target(&upper) + 1e-12);

        let next = sample.next_state;
        let next_iv = env.feasible(&z, &next);
        let gap = sup_gap(&q1.slice(&next), &q2.slice(&next), next_iv.lo, next_iv.hi);
        prop_assert!((target(&q1) - target(&q2)).abs() <= gamma * gap + 1e-12);
    }

    #[test]
    fn exact_operator_preserves_concavity(
        q in concave_q(2),
        z in mean_field(),
        level in 0usize..2,
        p1 in (0.0..20.0f64, 0.0..1.0f64),
        p2 in (0.0..20.0f64, 0.0..1.0f64),
    ) {
        let env = env();
        let gamma = env.discount();
        // T_z Q(b, a) = r_z(b, w, a) + γ Σ_w' P(w, w') max_a' Q(a, w', a')
        let t = |b: f64, a: f64| {
            let s = HouseholdState::new(b, level);
            let cont: f64 = (0..env.levels()).map(|w| {
                let next = HouseholdState::new(a, w);
                env.chain().prob(level, w) * greedy_value(&q, &next, env.feasible(&z, &next)).unwrap()
            }).sum();
            env.reward_unchecked(&z, &s, a) + gamma * cont
        };
        let at = |(b, frac): (f64, f64)| {
            let iv = env.feasible(&z, &HouseholdState::new(b, level));
            (b, iv.lo + frac * iv.width())
        };
        let (x, y) = (at(p1), at(p2));
        let mid = (0.5 * (x.0 + y.0), 0.5 * (x.1 + y.1));
        prop_assert!(t(mid.0, mid.1) >= 0.5 * (t(x.0, x.1) + t(y.0, y.1)) - 1e-9);
    }

    #[test]
    fn gibbs_density_integrates_to_one(
        q in concave_q(2),
        z in mean_field(),
        b in 0.0..20.0f64,
        level in 0usize..2,
        zeta in 0.05..5.0f64,
    ) {
        let env = env();
        let pi = GibbsPolicy::new(q, env.budget(&z), zeta).unwrap();
        let s = HouseholdState::new(b, level);
        let iv = env.feasible(&z, &s);
        prop_assume!(iv.width() > 1e-6);
        let mass = simpson(|a| pi.density(&s, a.clamp(iv.lo, iv.hi)).unwrap(), iv.lo, iv.hi, 20_000);
        prop_assert!((mass - 1.0).abs() <= 1e-6, "mass {}", mass);
        prop_assert!((pi.cdf(&s, iv.hi).unwrap() - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gibbs_mass_concentrates_as_zeta_falls(peak in 0.1..0.9f64, up in 0.5..5.0f64, down in 0.5..5.0f64, base in 0.0..5.0f64) {
        // tent with its maximum at `peak` on [0, 1]
        let f = MaxAffineFn::new(2, vec![(vec![0.0, up], base - up * peak), (vec![0.0, -down], base + down * peak)], 5.0, 20.0).unwrap();
        let q = ConcaveQ::per_level(vec![f], 20.0).unwrap();
        let unit = |_: &HouseholdState| FeasibleInterval::new(0.0, 1.0).unwrap();
        let s = HouseholdState::new(0.0, 0);
        let masses: Vec<f64> = [1.0, 0.3, 0.1, 0.03]
            .iter()
            .map(|&zeta| {
                let pi = GibbsPolicy::new(q.clone(), unit, zeta).unwrap();
                pi.cdf(&s, peak + 0.05).unwrap() - pi.cdf(&s, peak - 0.05).unwrap()
            })
            .collect();
        prop_assert!(masses.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{:?}", masses);
    }

    #[test]
    fn fitted_slopes_respect_bound(seed in any::<u64>(), lipschitz in 0.2..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let ys: Vec<f64> = rows.iter().map(|x| 4.0 * x[0] * x[0] + 3.0 * x[1].abs() + 0.1 * rng.gen::<f64>()).collect();
        let problem = RegressionProblem::from_rows(&rows, ys, 6, lipschitz, 50.0).unwrap().with_seed(seed);
        let fit = fit_max_affine(&problem).unwrap();
        prop_assert!(fit.function.slopes().iter().all(|a| a.abs() <= lipschitz));
        prop_assert!(fit.risk <= problem.sse(&fit_affine_ols(&problem).unwrap()) / 300.0 + 1e-12);
    }
}
