use std::sync::Arc;

use proptest::prelude::*;
use tensoropt::driver::{bracket_ratio, bracket_window, rate_bound, restart_schedule};
use tensoropt::linalg::{seeded_rng, Matrix, Vector};
use tensoropt::model::build_model;
use tensoropt::oracle::Oracle;
use tensoropt::problems::{Family, ProblemSpec, QuarticQuadratic, StartPoint, WorstCase};
use tensoropt::stochastic::{plan_batches, PlanInputs, Schedule};
use tensoropt::subsolve::{solve_model, SubsolveOptions};

fn random_quartic(seed: u64, d: usize) -> Arc<QuarticQuadratic> {
    let mut rng = seeded_rng(seed);
    let b = Matrix::from_fn(d, d, |_, _| tensoropt::linalg::normal_vector(&mut rng, 1)[0]);
    let q = &b * b.transpose() / d as f64;
    let c = tensoropt::linalg::normal_vector(&mut rng, d);
    Arc::new(QuarticQuadratic::new(q, c, Vector::zeros(d), 0.5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn model_at_zero_is_center_value(seed in 0u64..1000, p in 1usize..=3, h in 0.1f64..50.0) {
        let f = random_quartic(seed, 3);
        let x = Vector::from_row_slice(&[0.3, -0.2, 0.9]);
        let bundle = Oracle::new(f).eval_bundle(&x, p).unwrap();
        let state = build_model(&bundle, p, h, &[], None).unwrap();
        prop_assert_eq!(state.value(&Vector::zeros(3)).unwrap(), bundle.value);
    }

    #[test]
    fn model_gradient_matches_differences(seed in 0u64..1000, p in 1usize..=3) {
        let f = random_quartic(seed, 4);
        let mut rng = seeded_rng(seed + 1);
        let x = tensoropt::linalg::normal_vector(&mut rng, 4);
        let s = tensoropt::linalg::normal_vector(&mut rng, 4);
        let bundle = Oracle::new(f).eval_bundle(&x, p).unwrap();
        let state = build_model(&bundle, p, 3.0, &[], None).unwrap();
        let g = state.gradient(&s).unwrap();
        let t = 1e-5;
        let fd = Vector::from_fn(4, |i, _| {
            let mut e = Vector::zeros(4);
            e[i] = t;
            (state.value(&(&s + &e)).unwrap() - state.value(&(&s - &e)).unwrap()) / (2.0 * t)
        });
        prop_assert!((fd - &g).norm() <= 1e-6 * g.norm().max(1.0));
    }

    #[test]
    fn subproblem_solutions_are_stationary(seed in 0u64..1000, p in 2usize..=3) {
        let f = WorstCase::new(3, p).unwrap();
        let lp = tensoropt::oracle::Objective::meta(&f).lipschitz(p).unwrap();
        let mut rng = seeded_rng(seed);
        let x = tensoropt::linalg::normal_vector(&mut rng, 3);
        let bundle = Oracle::new(Arc::new(f)).eval_bundle(&x, p).unwrap();
        let state = build_model(&bundle, p, 6.0 * lp, &[], None).unwrap();
        let res = solve_model(&state, None, &SubsolveOptions::default()).unwrap();
        prop_assert!(res.model_grad_norm <= 1e-8 * bundle.gradient.norm().max(1.0));
        prop_assert!(res.model_value <= bundle.value + 1e-12);
    }

    #[test]
    fn restart_budgets_never_grow(p in 2usize..=3, sigma in 0.01f64..10.0, h in 0.5f64..100.0, r0 in 0.1f64..10.0) {
        let n = restart_schedule(p, 2.0, sigma, h, r0, 8).unwrap();
        prop_assert!(n.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(n.iter().all(|&v| v >= 1));
    }

    #[test]
    fn plan_follows_exponents(
        p in 1usize..=3,
        m in prop::collection::vec(0.1f64..10.0, 3),
        l in prop::collection::vec(0.1f64..10.0, 4),
        h in 0.1f64..10.0,
        eps in 1e-4f64..0.5,
    ) {
        let inputs = |e: f64| PlanInputs {
            p,
            schedule: Schedule::Plain,
            m: m[..p].to_vec(),
            l: l[..=p].to_vec(),
            h,
            eps: e,
            radius: 1.0,
            confidence: 0.05,
        };
        let a = plan_batches(inputs(eps)).unwrap();
        let b = plan_batches(inputs(eps / 10.0)).unwrap();
        for i in 1..=p {
            let expo = 2.0 * (p - i + 1) as f64 / p as f64;
            let got = (b.raw[i - 1].ln() - a.raw[i - 1].ln()) / std::f64::consts::LN_10;
            prop_assert!((got - expo).abs() < 1e-9);
            prop_assert!(b.n[i - 1] >= a.n[i - 1]);
        }
    }

    #[test]
    fn rate_bound_decreases(p in 1usize..=3, k in 1usize..500) {
        prop_assert!(rate_bound(p, 1.0, 1.0, k + 1) < rate_bound(p, 1.0, 1.0, k));
    }

    #[test]
    fn spec_text_round_trips(
        d in 1usize..50,
        seed in any::<u64>(),
        lambda2 in 0.0f64..1.0,
        mu in 1e-3f64..5.0,
        l3 in prop::option::of(0.0f64..1e6),
        sigma in prop::option::of(1e-6f64..10.0),
        fam in 0usize..5,
    ) {
        let mut spec = ProblemSpec::new(Family::all()[fam], d, 3);
        spec.seed = seed;
        spec.lambda2 = lambda2;
        spec.mu = mu;
        spec.lipschitz[2] = l3;
        spec.sigma_r = sigma;
        spec.x0 = StartPoint::Random;
        let back = ProblemSpec::parse(&spec.to_text()).unwrap();
        prop_assert_eq!(back, spec);
    }
}

#[test]
fn p1_bracket_window_is_a_point() {
    let (lo, hi) = bracket_window(1);
    assert_eq!(lo, hi);
    for h in [0.5, 10.0, 3.0e4] {
        assert_eq!(bracket_ratio(1.0 / (2.0 * h), h, 7.0, 1), 0.5);
    }
}
