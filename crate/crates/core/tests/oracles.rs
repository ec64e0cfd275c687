//! Checks against independent oracles written from scratch in this file.

use std::sync::Arc;

use approx::assert_relative_eq;
use monotone_hjb::assembly::{assemble, certify_monotonicity, Part};
use monotone_hjb::control::{
    compute_diffusion_budget, ArtificialDiffusion, Coefficients, Control, ControlProblem, OperatorSplitting,
    SplittingMode,
};
use monotone_hjb::field::{ScalarField, VectorField};
use monotone_hjb::mesh::{equilateral_mesh, interval_mesh, Point, Rect};
use monotone_hjb::problems;
use monotone_hjb::solver::{backward_solve, fixed_control_solve, howard_solve_step, SolverOptions, TimeGrid};
use monotone_hjb::sparse::{solve_mmatrix_system, CsrMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Explicit upwind sweep for `-v_t + |v_x| = 1` on a uniform grid, written
/// directly from finite differences.
fn upwind_oracle(v_next: &[f64], dx: f64, h: f64) -> Vec<f64> {
    let n = v_next.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        let backward = (v_next[i] - v_next[i - 1]) / dx;
        let forward = (v_next[i] - v_next[i + 1]) / dx;
        out[i] = v_next[i] - h * (backward.max(forward) - 1.0);
    }
    out
}

#[test]
fn upwind_oracle_is_nodally_exact_then_matches_library() {
    // 5 nodes on (-1, 1)
    let dx = 0.5;
    let xs: Vec<f64> = (0..5).map(|i| -1.0 + dx * i as f64).collect();
    let exact = |t: f64, x: f64| (1.0 - t).min(1.0 - x.abs());
    // the oracle itself reproduces the viscosity solution at nodes
    let mut v: Vec<f64> = xs.iter().map(|&x| exact(1.0, x)).collect();
    for k in (0..2).rev() {
        v = upwind_oracle(&v, dx, dx);
        for (i, &x) in xs.iter().enumerate() {
            assert!((v[i] - exact(k as f64 * dx, x)).abs() < 1e-14);
        }
    }

    let mesh = Arc::new(interval_mesh(-1.0, 1.0, 4).unwrap());
    let problem = problems::eikonal_1d();
    let s = OperatorSplitting::new(&problem, SplittingMode::Explicit, ArtificialDiffusion::MeshScaled(0.5)).unwrap();
    let budget = compute_diffusion_budget(&mesh, &s, &mesh.acuteness_certificate()).unwrap();
    let ops = assemble(&mesh, &s, &budget).unwrap();
    // library ordering is interior-first; map to the grid ordering
    let grid_index: Vec<usize> = (0..mesh.node_count())
        .map(|l| ((mesh.node(l)[0] + 1.0) / dx).round() as usize)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let mut grid: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..2.0)).collect();
        grid[0] = 0.0;
        grid[4] = 0.0;
        let lib_next: Vec<f64> = grid_index.iter().map(|&g| grid[g]).collect();
        let (lib, _) = howard_solve_step(&ops, &lib_next, dx, 1e-12, 5).unwrap();
        let oracle = upwind_oracle(&grid, dx, dx);
        for l in 0..mesh.node_count() {
            assert!((lib[l] - oracle[grid_index[l]]).abs() < 1e-13);
        }
    }
}

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

#[test]
fn sparse_solver_matches_dense_elimination() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = 50;
        let mut triplets = Vec::new();
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if i != j && rng.gen_bool(0.1) {
                    let v = -rng.gen_range(0.0..1.0);
                    triplets.push((i, j, v));
                    dense[i][j] = v;
                    off -= v;
                }
            }
            let d = off + rng.gen_range(0.1..2.0);
            triplets.push((i, i, d));
            dense[i][i] = d;
        }
        let m = CsrMatrix::from_triplets(n, n, &triplets);
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = solve_mmatrix_system(&m, &rhs, 1e-12).unwrap();
        let oracle = dense_solve(dense, rhs);
        for (a, b) in x.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

/// Degree-5 seven-point rule on the reference triangle (barycentric, weight).
fn seven_point_rule() -> Vec<([f64; 3], f64)> {
    let a1 = 0.059_715_871_789_770;
    let b1 = 0.470_142_064_105_115;
    let a2 = 0.797_426_985_353_087;
    let b2 = 0.101_286_507_323_456;
    let w1 = 0.132_394_152_788_506;
    let w2 = 0.125_939_180_544_827;
    vec![
        ([1.0 / 3.0; 3], 0.225),
        ([a1, b1, b1], w1),
        ([b1, a1, b1], w1),
        ([b1, b1, a1], w1),
        ([a2, b2, b2], w2),
        ([b2, a2, b2], w2),
        ([b2, b2, a2], w2),
    ]
}

#[test]
fn assembled_rows_match_quadrature_for_affine_data() {
    let mesh = equilateral_mesh(Rect::unit(), 4, 4).unwrap();
    let b = [(0.3, -0.2, 0.5), (-0.4, 0.1, 0.2)]; // b_k = p + q x + r y
    let c = (0.5, 0.3, 0.2);
    let a = 0.7;
    let affine = |(p, q, r): (f64, f64, f64)| ScalarField::function(move |x: Point| p + q * x[0] + r * x[1]);
    let problem = ControlProblem::new(
        vec![Control::new(
            "affine",
            Coefficients {
                a: ScalarField::Constant(a),
                b: VectorField([affine(b[0]), affine(b[1])]),
                c: affine(c),
                d: affine((1.0, 0.5, 0.0)),
            },
        )],
        ScalarField::zero(),
        1.0,
    )
    .unwrap();
    let s = OperatorSplitting::new(&problem, SplittingMode::Implicit, ArtificialDiffusion::Minimal).unwrap();
    let budget = compute_diffusion_budget(&mesh, &s, &mesh.acuteness_certificate()).unwrap();
    let ops = assemble(&mesh, &s, &budget).unwrap();
    let im = ops.matrix(0, Part::Implicit);
    let eval = |(p, q, r): (f64, f64, f64), x: Point| p + q * x[0] + r * x[1];
    let rule = seven_point_rule();
    for l in 0..mesh.interior_count() {
        let diffusion = budget.diffusion_implicit[0][l];
        let mut expected = std::collections::BTreeMap::new();
        let mut source = 0.0;
        let mut l1 = 0.0;
        for &e in mesh.patch(l) {
            let el = &mesh.elements()[e];
            let p: Vec<Point> = el.vertices.iter().map(|&v| mesh.node(v)).collect();
            let kl = el.vertices.iter().position(|&v| v == l).unwrap();
            for (lam, w) in &rule {
                let x = [
                    lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0],
                    lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1],
                ];
                let wt = w * el.volume;
                l1 += wt * lam[kl];
                source += wt * eval((1.0, 0.5, 0.0), x) * lam[kl];
                for (kj, &j) in el.vertices.iter().enumerate() {
                    let g = el.gradients[kj];
                    let gl = el.gradients[kl];
                    let val = diffusion * (g[0] * gl[0] + g[1] * gl[1])
                        + (eval(b[0], x) * g[0] + eval(b[1], x) * g[1]) * lam[kl]
                        + eval(c, x) * lam[kj] * lam[kl];
                    *expected.entry(j).or_insert(0.0) += wt * val;
                }
            }
        }
        assert_relative_eq!(l1, mesh.hat_l1_norm(l), max_relative = 1e-13);
        for (j, v) in expected {
            assert!((im.get(l, j) - v / l1).abs() < 1e-10 * (1.0 + v.abs() / l1), "row {l} col {j}");
        }
        assert!((ops.source(0)[l] - source / l1).abs() < 1e-12);
    }
}

#[test]
fn equilateral_budget_matches_brute_force_search() {
    let mesh = equilateral_mesh(Rect::unit(), 6, 6).unwrap();
    let problem = ControlProblem::new(
        vec![Control::new(
            "drift",
            Coefficients {
                a: ScalarField::zero(),
                b: VectorField::constant([1.0, 0.0]),
                c: ScalarField::zero(),
                d: ScalarField::Constant(1.0),
            },
        )],
        ScalarField::zero(),
        1.0,
    )
    .unwrap();
    let s = OperatorSplitting::new(&problem, SplittingMode::Explicit, ArtificialDiffusion::Minimal).unwrap();
    let cert = mesh.acuteness_certificate();
    assert!((cert.sin_theta - 0.5).abs() < 1e-12);
    let budget = compute_diffusion_budget(&mesh, &s, &cert).unwrap();
    for l in 0..mesh.interior_count() {
        let l1 = mesh.hat_l1_norm(l);
        let ok = |nu: f64| {
            mesh.patch(l).iter().all(|&e| {
                let el = &mesh.elements()[e];
                let g = el.gradient_of(l).unwrap();
                let gn = (g[0] * g[0] + g[1] * g[1]).sqrt() / l1;
                1.0 <= nu * 0.5 * gn * el.volume * (1.0 + 1e-12)
            })
        };
        // bisection on a bracket found by doubling
        let mut hi = 1e-6;
        while !ok(hi) {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert_relative_eq!(budget.minimal_explicit[0][l], hi, max_relative = 1e-9);
    }
    // the resulting explicit operator has the required sign structure
    let ops = assemble(&mesh, &s, &budget).unwrap();
    let report = certify_monotonicity(&ops, 1e-3).unwrap();
    assert!(report.controls[0].explicit_offdiag_ok);
}

fn fixed_transport_problem() -> ControlProblem {
    ControlProblem::new(
        vec![Control::new(
            "+1",
            Coefficients {
                a: ScalarField::zero(),
                b: VectorField::constant([1.0, 0.0]),
                c: ScalarField::zero(),
                d: ScalarField::Constant(1.0),
            },
        )],
        ScalarField::zero(),
        1.0,
    )
    .unwrap()
}

#[test]
fn fixed_control_is_backward_difference_transport() {
    // -v_t + v_x = 1, v = 0 at x = -1 and at t = 1
    let n = 16;
    let dx = 2.0 / n as f64;
    let mesh = Arc::new(interval_mesh(-1.0, 1.0, n).unwrap());
    let eik = problems::eikonal_1d();
    let s = OperatorSplitting::new(&eik, SplittingMode::Explicit, ArtificialDiffusion::MeshScaled(0.5)).unwrap();
    let tg = TimeGrid::new(1.0, dx).unwrap();
    let sol = fixed_control_solve(&eik, &mesh, &s, tg, 0).unwrap();
    // oracle: v^k_i = v^{k+1}_i - h ((v_i - v_{i-1})/dx - 1) with h = dx
    let mut grid = vec![0.0; n + 1];
    for k in (0..tg.steps()).rev() {
        let mut next = vec![0.0; n + 1];
        for i in 1..n {
            next[i] = grid[i] - dx * ((grid[i] - grid[i - 1]) / dx - 1.0);
        }
        grid = next;
        for l in 0..mesh.node_count() {
            let i = ((mesh.node(l)[0] + 1.0) / dx).round() as usize;
            assert!((sol.level(k)[l] - grid[i]).abs() < 1e-12);
        }
    }
    // and a single-control problem with the same data agrees with backward_solve
    let single = fixed_transport_problem();
    let s1 = OperatorSplitting::new(&single, SplittingMode::Explicit, ArtificialDiffusion::MeshScaled(0.5)).unwrap();
    let (v, _) = backward_solve(&single, &mesh, &s1, tg, SolverOptions::default()).unwrap();
    for k in 0..=tg.steps() {
        for l in 0..mesh.node_count() {
            assert!((v.level(k)[l] - sol.level(k)[l]).abs() < 1e-12);
        }
    }
}
