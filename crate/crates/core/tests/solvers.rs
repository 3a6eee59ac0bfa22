use tensoropt::driver::{msn_run, rate_bound, restart_schedule, restarted_run, RunStatus, SolverConfig};
use tensoropt::linalg::Vector;
use tensoropt::problems::{make_problem, reference_solution, Family, ProblemSpec};

#[test]
fn worst_case_p2_within_rate_bound() {
    let prob = make_problem(&ProblemSpec::new(Family::WorstCase, 10, 2)).unwrap();
    let h = 3.0 * prob.lipschitz(2).unwrap();
    let x0 = prob.spec.start_point();
    let r = x0.norm();
    let mut cfg = SolverConfig::new(2, h);
    cfg.eps_grad = None;
    cfg.max_outer = 60;
    cfg.f_star = Some(0.0);
    let tr = msn_run(&cfg, &prob.oracle(), None, &x0).unwrap();
    for row in &tr.rows[1..] {
        assert!(row.f_gap.unwrap() <= rate_bound(2, h, r, row.k));
    }
}

#[test]
fn logistic_reference_is_certified() {
    let mut spec = ProblemSpec::new(Family::Logistic, 20, 2);
    spec.m = 500;
    spec.seed = 7;
    let prob = make_problem(&spec).unwrap();
    let r = reference_solution(&prob, 1e-10).unwrap();
    assert!(r.disagreement <= 1e-10);
    assert!(r.grad_norm <= 1e-10);
}

#[test]
fn restart_on_quartic_quadratic() {
    let spec = ProblemSpec::new(Family::QuarticQuadratic, 8, 3);
    let prob = make_problem(&spec).unwrap();
    let reference = reference_solution(&prob, 1e-10).unwrap();
    let (r, sigma) = spec.certified_growth().unwrap();
    let x0 = spec.start_point();
    let r0 = (&x0 - &reference.x_star).norm();
    let h = 6.0 * prob.lipschitz(3).unwrap();
    let mut cfg = SolverConfig::new(3, h);
    cfg.eps_grad = None;
    cfg.f_star = Some(reference.f_star);
    cfg.eps_gap = Some(1e-8);
    let phases = 12;
    let budget: usize = restart_schedule(3, r, sigma, h, r0, phases).unwrap().iter().sum();
    let tr = restarted_run(&cfg, r, sigma, r0, phases, &prob.oracle(), None, &x0, Some(&reference.x_star)).unwrap();
    assert_eq!(tr.status, RunStatus::Converged);
    assert!(tr.outer_iterations() <= budget);
    assert!(tr.phases.iter().all(|p| p.halved == Some(true)));
}

#[test]
fn reruns_are_bitwise_identical() {
    let mut spec = ProblemSpec::new(Family::LogSumExp, 6, 3);
    spec.m = 40;
    let prob = make_problem(&spec).unwrap();
    let mut cfg = SolverConfig::new(3, 6.0 * prob.lipschitz(3).unwrap());
    cfg.record_timing = false;
    cfg.max_outer = 20;
    let x0 = Vector::from_element(6, 0.5);
    let a = msn_run(&cfg, &prob.oracle(), None, &x0).unwrap();
    let b = msn_run(&cfg, &prob.oracle(), None, &x0).unwrap();
    assert_eq!(a.rows, b.rows);
}
