//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints its verdict; exits non-zero if any fails.
//!
//! Criteria 1 and 2 run 30 full solves and dominate the runtime. Passing
//! criterion numbers as arguments runs only those.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfgham::cfqi::{cfqi_for, CfqiConfig};
use mfgham::economy::{Aiyagari, AiyagariConfig, Economy, MeanFieldTerm};
use mfgham::equilibrium::{contraction_diagnostics, grid_q, reference_equilibrium, OracleConfig, OracleOutcome};
use mfgham::experiment::{fit_bench, rate_fit, run_experiment_against, Config, ExperimentPlan, ExperimentSummary};
use mfgham::mdp::{
    bellman_target, greedy_value, ActionValue, ConcaveQ, ConcaveSlice, FeasibleInterval, HouseholdState,
    TransitionSample,
};
use mfgham::policy::{policy_distance, simpson, uniform_policy, GibbsPolicy, Policy};
use mfgham::shape_reg::{
    fit_affine_ols, fit_max_affine, icnn_to_max_affine, max_affine_to_icnn, select_piece_count, MaxAffineFn,
    RegressionProblem,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn env() -> Aiyagari {
    Aiyagari::new(AiyagariConfig::default()).unwrap()
}

fn random_max_affine(rng: &mut ChaCha8Rng, dim: usize, k: usize, slope: f64, offset: f64, bound: f64) -> MaxAffineFn {
    let pieces = (0..k)
        .map(|_| ((0..dim).map(|_| rng.gen_range(-slope..slope)).collect(), rng.gen_range(-offset..offset)))
        .collect();
    MaxAffineFn::new(dim, pieces, slope, bound).unwrap()
}

/// Concave Q whose convex parts stay below `B` on the state-action box.
fn random_concave_q(rng: &mut ChaCha8Rng, env: &Aiyagari) -> ConcaveQ {
    let b = env.q_bound();
    let fits = (0..env.levels()).map(|_| {
        let k = rng.gen_range(1..=6);
        random_max_affine(rng, 2, k, 0.3, 5.0, b)
    });
    ConcaveQ::per_level(fits.collect(), b).unwrap()
}

fn random_z(rng: &mut ChaCha8Rng) -> MeanFieldTerm {
    MeanFieldTerm::new(rng.gen_range(0.3..2.0), rng.gen_range(0.02..0.4))
}

fn ks_statistic(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn sweep(env: &Aiyagari, reference: MeanFieldTerm) -> ExperimentSummary {
    let cfg = Config::default();
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan::from_config(&cfg, dir.path());
    run_experiment_against(env, &cfg, &plan, reference).unwrap()
}

fn criterion_1(summary: &ExperimentSummary) -> Verdict {
    let means: Vec<f64> = summary.aggregate.iter().map(|a| a.mean_error).collect();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let slope = summary.rate.slope;
    let table: Vec<String> =
        summary.aggregate.iter().map(|a| format!("M={} mean {:.4} sd {:.4}", a.m, a.mean_error, a.sd_error)).collect();
    verdict(
        (-0.65..=-0.15).contains(&slope) && decreasing,
        format!("slope {slope:.3} (band [-0.65, -0.15]), strictly decreasing {decreasing}; {}", table.join("; ")),
    )
}

fn criterion_2(summary: &ExperimentSummary) -> Verdict {
    let runs: Vec<_> = summary.trials.iter().zip(&summary.runs).filter(|(t, _)| t.m == 4000).map(|(_, r)| r).collect();
    let ratios: Vec<f64> =
        runs.iter().map(|r| contraction_diagnostics(&r.trajectory).unwrap().geometric_mean).collect();
    let contracting = ratios.iter().filter(|g| **g < 1.0).count();
    let rounds = runs[0].trajectory.len() - 1;
    let median_gap: Vec<f64> = (0..=rounds)
        .map(|t| {
            let mut d: Vec<f64> = runs.iter().map(|r| r.trajectory[t].l1_distance(&r.last())).collect();
            d.sort_by(f64::total_cmp);
            let n = d.len();
            if n % 2 == 1 {
                d[n / 2]
            } else {
                0.5 * (d[n / 2 - 1] + d[n / 2])
            }
        })
        .collect();
    let first_rise = (3..rounds).find(|&t| median_gap[t + 1] > median_gap[t]);
    let pass = runs.len() == 10 && contracting >= 9 && first_rise.is_none();
    let gaps: Vec<String> = median_gap[3..].iter().map(|g| format!("{g:.3}")).collect();
    verdict(
        pass,
        format!(
            "{contracting}/{} trials with geometric-mean ratio < 1 (ratios {:?}); median ‖z^t - z^T‖ for t >= 3: [{}]{}",
            runs.len(),
            ratios.iter().map(|g| format!("{g:.2}")).collect::<Vec<_>>(),
            gaps.join(", "),
            first_rise.map_or(String::new(), |t| format!("; rises at t={t}"))
        ),
    )
}

fn criterion_3(env: &Aiyagari, base: &OracleOutcome) -> Verdict {
    let corners = env.mean_field_box().corners();
    let starts = [corners[0], corners[1], corners[3]];
    let spread = starts
        .iter()
        .map(|&z0| {
            let out = reference_equilibrium(env, &OracleConfig { initial: z0, ..OracleConfig::default() }).unwrap();
            out.z.l1_distance(&base.z)
        })
        .fold(0.0, f64::max);
    let fine = reference_equilibrium(env, &OracleConfig::default().refined()).unwrap();
    let shift = fine.z.l1_distance(&base.z);
    verdict(
        spread <= 1e-6 && shift <= 1e-3,
        format!(
            "z* = ({:.6}, {:.6}); corner spread {spread:.2e} (<= 1e-6); refinement shift {shift:.2e} (<= 1e-3)",
            base.z.wage, base.z.rent
        ),
    )
}

fn criterion_4(env: &Aiyagari, z: MeanFieldTerm) -> Verdict {
    let reference = grid_q(env, &z, &OracleConfig::default()).unwrap();
    let probes: Vec<(HouseholdState, f64)> = (0..env.levels())
        .flat_map(|w| (0..=20).map(move |i| HouseholdState::new(env.capital_max() * i as f64 / 20.0, w)))
        .flat_map(|s| {
            let iv = env.feasible(&z, &s);
            (0..=20).map(move |j| (s, iv.lo + iv.width() * j as f64 / 20.0))
        })
        .collect();
    let sizes = [250usize, 1000, 4000];
    let means: Vec<f64> = sizes
        .iter()
        .map(|&m| {
            (0..5u64)
                .map(|seed| {
                    let data = env.sample_dataset(&z, m, 1000 + seed);
                    let cfg = CfqiConfig { discount: env.discount(), seed, ..CfqiConfig::default() };
                    let q = cfqi_for(env, &data, &cfg).unwrap().q;
                    probes.iter().map(|(s, a)| (q.value(s, *a) - reference.value(s, *a)).abs()).fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 5.0
        })
        .collect();
    let limit = 0.15 * env.q_bound();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        means[2] <= limit && monotone,
        format!(
            "mean sup distance over 5 seeds: M=250 {:.3}, M=1000 {:.3}, M=4000 {:.3} (limit {limit:.2}); non-increasing {monotone}",
            means[0], means[1], means[2]
        ),
    )
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut convex_violations = 0;
    let mut slope_violations = 0;
    let mut dominated = 0;
    let problems = 20;
    for p in 0..problems {
        let dim = 1 + p % 3;
        let lipschitz = rng.gen_range(0.5..4.0);
        let rows: Vec<Vec<f64>> = (0..400).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = rows
            .iter()
            .map(|x| x.iter().map(|v| 2.0 * v * v + v.abs()).sum::<f64>() + 0.2 * rng.gen::<f64>())
            .collect();
        let k = select_piece_count(400, dim, 64);
        let problem = RegressionProblem::from_rows(&rows, ys, k, lipschitz, 50.0).unwrap().with_seed(p as u64);
        let fit = fit_max_affine(&problem).unwrap();
        slope_violations += fit.function.slopes().iter().filter(|a| a.abs() > lipschitz).count();
        if fit.risk <= problem.sse(&fit_affine_ols(&problem).unwrap()) / 400.0 {
            dominated += 1;
        }
        for _ in 0..500 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let l: f64 = rng.gen();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| l * a + (1.0 - l) * b).collect();
            let rhs = l * fit.function.value(&x) + (1.0 - l) * fit.function.value(&y);
            if fit.function.value(&mid) > rhs + 1e-12 * (1.0 + rhs.abs()) {
                convex_violations += 1;
            }
        }
    }
    let bench = fit_bench(&[250, 1000, 4000], 2, 0.05, 11).unwrap();
    let rmse: Vec<f64> = bench.iter().map(|(r, _)| r.test_rmse).collect();
    let monotone = rmse.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        convex_violations == 0 && slope_violations == 0 && dominated == problems && monotone,
        format!(
            "midpoint violations {convex_violations}/10000; slope-bound violations {slope_violations}; risk <= affine on {dominated}/{problems}; held-out RMSE {:.4} {:.4} {:.4}",
            rmse[0], rmse[1], rmse[2]
        ),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dim = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=6);
        let f = random_max_affine(&mut rng, dim, k, 2.0, 2.0, 100.0);
        let net = max_affine_to_icnn(&f);
        let back = icnn_to_max_affine(&net).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let target = f.value(&x).max(0.0);
        worst = worst.max((net.eval(&x).unwrap() - target).abs()).max((back.value(&x) - target).abs());
    }
    verdict(worst <= 1e-10, format!("sup gap {worst:.2e} over 1000 probes (<= 1e-10)"))
}

/// Exact `sup |Q1 - Q2|` of two slices on `[lo, hi]`.
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

fn criterion_7() -> Verdict {
    let env = env();
    let gamma = env.discount();
    let bound = env.q_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut mono, mut contraction, mut concave) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..2000 {
        let z = random_z(&mut rng);
        let budget = env.budget(&z);
        let q1 = random_concave_q(&mut rng, &env);
        let q2 = random_concave_q(&mut rng, &env);
        let shift = rng.gen_range(0.0..3.0);
        let upper = ConcaveQ::per_level(
            (0..env.levels())
                .map(|w| {
                    let f = q1.convex_part(w);
                    MaxAffineFn::new(
                        2,
                        f.pieces().map(|(a, c)| (a.to_vec(), c - shift)).collect(),
                        f.lipschitz(),
                        bound,
                    )
                    .unwrap()
                })
                .collect(),
            bound,
        )
        .unwrap();
        let state = HouseholdState::new(rng.gen_range(0.0..env.capital_max()), rng.gen_range(0..env.levels()));
        let iv = env.feasible(&z, &state);
        let action = iv.lo + rng.gen::<f64>() * iv.width();
        let next = HouseholdState::new(action, rng.gen_range(0..env.levels()));
        let sample =
            TransitionSample { state, action, reward: env.reward_unchecked(&z, &state, action), next_state: next };
        let t = |q: &ConcaveQ| bellman_target(&sample, q, gamma, bound, &budget);
        mono = mono.max(t(&q1) - t(&upper));
        let next_iv = env.feasible(&z, &next);
        let gap = sup_gap(&q1.slice(&next), &q2.slice(&next), next_iv.lo, next_iv.hi);
        contraction = contraction.max((t(&q1) - t(&q2)).abs() - gamma * gap);

        let level = state.level;
        let exact = |b: f64, a: f64| {
            let cont: f64 = (0..env.levels())
                .map(|w| {
                    let s = HouseholdState::new(a, w);
                    env.chain().prob(level, w) * greedy_value(&q1, &s, env.feasible(&z, &s)).unwrap()
                })
                .sum();
            env.reward_unchecked(&z, &HouseholdState::new(b, level), a) + gamma * cont
        };
        let point = |rng: &mut ChaCha8Rng| {
            let b = rng.gen_range(0.0..env.capital_max());
            let iv = env.feasible(&z, &HouseholdState::new(b, level));
            (b, iv.lo + rng.gen::<f64>() * iv.width())
        };
        let (x, y) = (point(&mut rng), point(&mut rng));
        let mid = exact(0.5 * (x.0 + y.0), 0.5 * (x.1 + y.1));
        concave = concave.max(0.5 * (exact(x.0, x.1) + exact(y.0, y.1)) - mid);
    }
    verdict(
        mono <= 1e-12 && contraction <= 1e-12 && concave <= 1e-9,
        format!(
            "monotonicity excess {mono:.1e}, contraction excess {contraction:.1e} (<= 1e-12); concavity excess {concave:.1e} (<= 1e-9) over 2000 draws"
        ),
    )
}

fn criterion_8() -> Verdict {
    let env = env();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mass_err: f64 = 0.0;
    for _ in 0..200 {
        let z = random_z(&mut rng);
        let q = random_concave_q(&mut rng, &env);
        let pi = GibbsPolicy::new(q, env.budget(&z), rng.gen_range(0.05..5.0)).unwrap();
        let s = HouseholdState::new(rng.gen_range(0.0..env.capital_max()), rng.gen_range(0..env.levels()));
        let iv = env.feasible(&z, &s);
        if iv.width() > 1e-6 {
            let mass = simpson(|a| pi.density(&s, a.clamp(iv.lo, iv.hi)).unwrap(), iv.lo, iv.hi, 20_000);
            mass_err = mass_err.max((mass - 1.0).abs());
        }
    }

    // Q(s, a) = a on [0, 1] with ζ = 1
    let unit = |_: &HouseholdState| FeasibleInterval::new(0.0, 1.0).unwrap();
    let linear =
        ConcaveQ::per_level(vec![MaxAffineFn::new(2, vec![(vec![0.0, -1.0], 20.0)], 1.0, 20.0).unwrap()], 20.0)
            .unwrap();
    let s = HouseholdState::new(0.0, 0);
    let exact_pi = GibbsPolicy::new(linear, unit, 1.0).unwrap();
    let closed = (0.5f64.exp() - 1.0) / (std::f64::consts::E - 1.0);
    let cdf_err = (exact_pi.cdf(&s, 0.5).unwrap() - closed).abs();
    let grid_pi = GibbsPolicy::new(|_: &HouseholdState, a: f64| a, unit, 1.0).unwrap();
    let grid_cdf_err = (grid_pi.cdf(&s, 0.5).unwrap() - closed).abs();

    let truth = |a: f64| (a.exp() - 1.0) / (std::f64::consts::E - 1.0);
    let draw = |pi: &dyn Fn(&mut ChaCha8Rng) -> f64, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ks_statistic((0..100_000).map(|_| pi(&mut rng)).collect(), truth)
    };
    let ks_exact = draw(&|r| exact_pi.sample(&s, r).unwrap(), 81);
    let ks_grid = draw(&|r| grid_pi.sample(&s, r).unwrap(), 82);

    let z = MeanFieldTerm::new(1.0, 0.1);
    let flat = GibbsPolicy::new(random_concave_q(&mut rng, &env), env.budget(&z), 1e6).unwrap();
    let states: Vec<HouseholdState> =
        (0..=10).flat_map(|i| (0..2).map(move |w| HouseholdState::new(2.0 * i as f64, w))).collect();
    let uniform_gap = policy_distance(&flat, &uniform_policy(env.budget(&z)), &states, 512).unwrap();

    verdict(
        mass_err <= 1e-6 && cdf_err <= 1e-6 && ks_exact <= 0.01 && ks_grid <= 0.01 && uniform_gap <= 1e-3,
        format!(
            "normalization error {mass_err:.1e}; P(a <= 0.5) error {cdf_err:.1e} exact, {grid_cdf_err:.1e} grid; KS {ks_exact:.4} exact, {ks_grid:.4} grid; ζ=1e6 vs uniform {uniform_gap:.1e}"
        ),
    )
}

fn criterion_9() -> Verdict {
    let env = env();
    let alpha = env.config().capital_share;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.gen_range(0.05..20.0);
        let n = rng.gen_range(0.05..1.0);
        let z = env.marginal_products(k, n);
        worst = worst.max((z.rent * k + z.wage * n - env.output(k, n)).abs());
    }
    let sym = env.marginal_products(1.7, 1.7);
    let exact = sym.rent == alpha && sym.wage == 1.0 - alpha;
    verdict(
        worst <= 1e-12 && exact,
        format!(
            "Euler residual {worst:.1e} over 1000 points (<= 1e-12); symmetric point ({}, {}) exact {exact}",
            sym.wage, sym.rent
        ),
    )
}

fn main() -> ExitCode {
    let env = env();
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| only.is_empty() || only.contains(&id);
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut run = |id: usize, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(id) {
            return;
        }
        let clock = Instant::now();
        let v = f();
        println!(
            "criterion {id}: {} ({:.1}s) {}",
            if v.pass { "PASS" } else { "FAIL" },
            clock.elapsed().as_secs_f64(),
            v.detail
        );
        results.push((id, v));
    };

    run(5, &mut criterion_5);
    run(6, &mut criterion_6);
    run(7, &mut criterion_7);
    run(8, &mut criterion_8);
    run(9, &mut criterion_9);
    if [1, 2, 3, 4].iter().any(|id| wanted(*id)) {
        let base = reference_equilibrium(&env, &OracleConfig::default()).unwrap();
        run(3, &mut || criterion_3(&env, &base));
        run(4, &mut || criterion_4(&env, base.z));
        if wanted(1) || wanted(2) {
            let summary = sweep(&env, base.z);
            run(1, &mut || criterion_1(&summary));
            run(2, &mut || criterion_2(&summary));
            let points: Vec<(f64, f64)> = summary.aggregate.iter().map(|a| (a.m as f64, a.mean_error)).collect();
            if let Ok(fit) = rate_fit(&points) {
                println!("rate fit: slope {:.3}, intercept {:.3}, r² {:.3}", fit.slope, fit.intercept, fit.r_squared);
            }
        }
    }

    let failed: Vec<usize> = results.iter().filter(|(_, v)| !v.pass).map(|(id, _)| *id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
