mod common;

use std::sync::Arc;

use monotone_hjb::assembly::{assemble, certify_monotonicity, DiscreteOperatorSet, Part};
use monotone_hjb::control::{compute_diffusion_budget, ArtificialDiffusion, ControlProblem, OperatorSplitting};
use monotone_hjb::diagnostics::{l2h1_distance, l2h1_error, linf_error};
use monotone_hjb::field::ScalarField;
use monotone_hjb::mesh::{equilateral_mesh, interval_mesh, Mesh, Rect};
use monotone_hjb::problems;
use monotone_hjb::solver::{
    bellman_residual, final_nodal_values, fixed_control_with_operators, solve_with_operators, DiscreteSolution,
    SolverOptions, TimeGrid,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Case {
    mesh: Arc<Mesh>,
    problem: ControlProblem,
    ops: DiscreteOperatorSet,
    timegrid: TimeGrid,
}

fn build(seed: u64, dim: usize, controls: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = common::random_mesh(&mut rng, dim);
    let problem = common::random_problem(&mut rng, dim, controls, true);
    let mode = common::random_mode(&mut rng);
    let s = OperatorSplitting::new(&problem, mode, ArtificialDiffusion::Minimal).unwrap();
    let budget = compute_diffusion_budget(&mesh, &s, &mesh.acuteness_certificate()).unwrap();
    let ops = assemble(&mesh, &s, &budget).unwrap();
    let limit = certify_monotonicity(&ops, 1.0).unwrap().max_stable_h.min(0.1);
    let steps = (problem.horizon() / limit).ceil() as usize;
    let timegrid = TimeGrid::with_steps(problem.horizon(), steps).unwrap();
    let report = certify_monotonicity(&ops, timegrid.h()).unwrap();
    assert!(report.admissible(), "{:?}", report.failure());
    Case {
        mesh,
        problem,
        ops,
        timegrid,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hat_gradients_sum_to_zero_and_norms_partition_volume(n in 3usize..12, one_d in any::<bool>()) {
        let mesh = if one_d { interval_mesh(0.0, 2.0, n).unwrap() } else { equilateral_mesh(Rect::unit(), n, n).unwrap() };
        for el in mesh.elements() {
            let s = el.gradients.iter().fold([0.0, 0.0], |acc, g| [acc[0] + g[0], acc[1] + g[1]]);
            prop_assert!(s[0].abs() < 1e-9 && s[1].abs() < 1e-9);
        }
        let volume: f64 = mesh.elements().iter().map(|e| e.volume).sum();
        let hats: f64 = (0..mesh.node_count()).map(|l| mesh.hat_l1_norm(l)).sum();
        prop_assert!((volume - hats).abs() < 1e-12 * volume);
    }

    #[test]
    fn solutions_are_nonnegative_and_below_every_fixed_control(seed in any::<u64>(), one_d in any::<bool>(), k in 1usize..4) {
        let case = build(seed, if one_d { 1 } else { 2 }, k);
        let v_t = final_nodal_values(&case.problem, &case.mesh);
        let (sol, report) = solve_with_operators(&case.ops, &case.mesh, v_t.clone(), case.timegrid, SolverOptions::default()).unwrap();
        prop_assert!(sol.min_value() >= -1e-12);
        for alpha in 0..k {
            let fixed = fixed_control_with_operators(&case.ops, &case.mesh, v_t.clone(), case.timegrid, alpha).unwrap();
            for (a, b) in sol.values().iter().flatten().zip(fixed.values().iter().flatten()) {
                prop_assert!(a <= &(b + 1e-9));
            }
        }
        let tol = SolverOptions::default().resolved_tol(&case.ops);
        for step in &report.steps {
            prop_assert!(step.residuals.windows(2).all(|w| w[1] < w[0]), "{:?}", step.residuals);
            let r = bellman_residual(&case.ops, sol.level(step.k + 1), sol.level(step.k), case.timegrid.h()).unwrap();
            prop_assert!(r <= tol.max(1e-9), "residual {r} at k = {}", step.k);
        }
    }

    #[test]
    fn larger_costs_never_lower_the_solution(seed in any::<u64>(), bump in 0.0f64..1.0) {
        let mut case = build(seed, 1, 2);
        let v_t = final_nodal_values(&case.problem, &case.mesh);
        let (low, _) = solve_with_operators(&case.ops, &case.mesh, v_t.clone(), case.timegrid, SolverOptions::default()).unwrap();
        let n = case.ops.interior_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let raised: Vec<Vec<f64>> = (0..case.ops.control_count())
            .map(|a| case.ops.source(a).iter().map(|c| c + bump * rand::Rng::gen_range(&mut rng, 0.0..1.0)).collect())
            .collect();
        case.ops = DiscreteOperatorSet::from_parts(
            n,
            case.ops.node_count(),
            (0..2).map(|a| case.ops.matrix(a, Part::Explicit).clone()).collect(),
            (0..2).map(|a| case.ops.matrix(a, Part::Implicit).clone()).collect(),
            raised,
        ).unwrap();
        let (high, _) = solve_with_operators(&case.ops, &case.mesh, v_t, case.timegrid, SolverOptions::default()).unwrap();
        for (a, b) in low.values().iter().flatten().zip(high.values().iter().flatten()) {
            prop_assert!(b >= &(a - 1e-10));
        }
    }

    #[test]
    fn errors_are_invariant_under_relabeling(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rand::Rng::gen_range(&mut rng, 3..7);
        let mesh = Arc::new(equilateral_mesh(Rect::unit(), n, n).unwrap());
        let tg = TimeGrid::new(1.0, 0.5).unwrap();
        let values: Vec<Vec<f64>> = (0..3).map(|k| (0..mesh.node_count()).map(|i| ((i * 31 + k * 7) % 11) as f64 / 11.0).collect()).collect();
        let ni = mesh.interior_count();
        let nn = mesh.node_count();
        let perm: Vec<usize> = (0..ni).rev().chain((ni..nn).rev()).collect();
        let relabeled = Arc::new(mesh.relabeled(&perm).unwrap());
        let origin: Vec<usize> = (0..nn).map(|j| mesh.find_node(relabeled.node(j), 1e-12).unwrap()).collect();
        prop_assert!(origin.iter().enumerate().any(|(j, &o)| j != o));
        let moved: Vec<Vec<f64>> = values.iter().map(|v| origin.iter().map(|&o| v[o]).collect()).collect();
        let a = DiscreteSolution::new(mesh, tg, values).unwrap();
        let b = DiscreteSolution::new(relabeled, tg, moved).unwrap();
        let exact = problems::eikonal_exact();
        prop_assert!((linf_error(&a, &exact) - linf_error(&b, &exact)).abs() < 1e-14);
        prop_assert!((l2h1_error(&a, &exact) - l2h1_error(&b, &exact)).abs() < 1e-12);
        prop_assert!(l2h1_distance(&a, &b) < 1e-10);
    }
}

#[test]
fn zero_data_gives_zero_solution() {
    let mesh = Arc::new(interval_mesh(-1.0, 1.0, 16).unwrap());
    let eik = problems::eikonal_1d();
    let controls = eik
        .controls()
        .iter()
        .cloned()
        .map(|mut c| {
            c.coefficients.d = ScalarField::zero();
            c
        })
        .collect();
    let problem = ControlProblem::new(controls, ScalarField::zero(), 1.0).unwrap();
    let s = OperatorSplitting::new(&problem, monotone_hjb::control::SplittingMode::Implicit, ArtificialDiffusion::MeshScaled(0.5)).unwrap();
    let tg = TimeGrid::new(1.0, 0.125).unwrap();
    let (sol, _) = monotone_hjb::solver::backward_solve(&problem, &mesh, &s, tg, SolverOptions::default()).unwrap();
    assert!(sol.values().iter().flatten().all(|&v| v == 0.0));
}
