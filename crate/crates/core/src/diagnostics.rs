//! Error norms, convergence tables, the stiffness consistency experiment and
//! the coercivity screening probe.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{stiffness_matrix, DiscreteOperatorSet, Part};
use crate::control::{ArtificialDiffusion, ControlProblem, OperatorSplitting, SplittingMode};
use crate::error::{HjbError, Result};
use crate::field::{SmoothField, SpaceTimeField};
use crate::mesh::{dot, interval_mesh, patterned_rectangle_mesh, Mesh, Pattern, Point, Rect};
use crate::problems;
use crate::solver::{backward_solve, DiscreteSolution, SolverOptions, TimeGrid};
use crate::sparse::solve_mmatrix_system;

/// Error of one discrete solution against a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub level: usize,
    pub mesh_size: f64,
    pub h: f64,
    pub linf_error: f64,
    pub l2h1_error: f64,
}

/// Max over time levels and nodes of `|v - exact|`.
pub fn linf_error(solution: &DiscreteSolution, exact: &dyn SpaceTimeField) -> f64 {
    let mesh = solution.mesh();
    let tg = solution.timegrid();
    solution
        .values()
        .par_iter()
        .enumerate()
        .map(|(k, level)| {
            let s = tg.level(k);
            level
                .iter()
                .zip(mesh.nodes())
                .map(|(v, &x)| (v - exact.value(s, x)).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

// 3-point Gauss on the reference interval, as barycentric pairs
const GAUSS_1D: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

// degree-4 six-point triangle rule
const TRI_A: [(f64, f64, f64); 2] = [
    (0.445_948_490_915_965, 0.108_103_018_168_070, 0.223_381_589_678_011),
    (0.091_576_213_509_771, 0.816_847_572_980_459, 0.109_951_743_655_322),
];

/// Quadrature points (physical) and weights (summing to the element volume).
fn element_quadrature(mesh: &Mesh, e: usize) -> Vec<(Point, f64)> {
    let el = &mesh.elements()[e];
    let p: Vec<Point> = el.vertices.iter().map(|&v| mesh.node(v)).collect();
    let combine = |lam: &[f64]| {
        let mut x = [0.0; 2];
        for (pi, l) in p.iter().zip(lam) {
            x[0] += l * pi[0];
            x[1] += l * pi[1];
        }
        x
    };
    if mesh.dim() == 1 {
        GAUSS_1D
            .iter()
            .map(|&(s, w)| (combine(&[1.0 - s, s]), w * el.volume))
            .collect()
    } else {
        let mut out = Vec::with_capacity(6);
        for &(a, b, w) in &TRI_A {
            for lam in [[b, a, a], [a, b, a], [a, a, b]] {
                out.push((combine(&lam), w * el.volume));
            }
        }
        out
    }
}

// 2-point Gauss on [0, 1]
const GAUSS_TIME: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

fn space_time_gradient_norm<F>(mesh: &Mesh, timegrid: TimeGrid, diff: F) -> f64
where
    F: Fn(usize, f64, Point) -> [f64; 2] + Sync,
{
    let h = timegrid.h();
    let total: f64 = (0..mesh.elements().len())
        .into_par_iter()
        .map(|e| {
            let quad = element_quadrature(mesh, e);
            let mut sum = 0.0;
            for k in 0..timegrid.steps() {
                let s = timegrid.level(k);
                for tau in GAUSS_TIME {
                    let t = s + tau * h;
                    for &(x, w) in &quad {
                        let g = diff(e, t, x);
                        sum += 0.5 * h * w * dot(g, g);
                    }
                }
            }
            sum
        })
        .sum();
    total.sqrt()
}

fn element_gradient(mesh: &Mesh, e: usize, values: &[f64]) -> [f64; 2] {
    let el = &mesh.elements()[e];
    let mut g = [0.0; 2];
    for (&v, gv) in el.vertices.iter().zip(&el.gradients) {
        g[0] += values[v] * gv[0];
        g[1] += values[v] * gv[1];
    }
    g
}

fn solution_gradient(solution: &DiscreteSolution, e: usize, t: f64) -> [f64; 2] {
    let tg = solution.timegrid();
    let k = ((t / tg.h()).floor() as usize).min(tg.steps() - 1);
    let theta = (t - tg.level(k)) / tg.h();
    let g0 = element_gradient(solution.mesh(), e, solution.level(k));
    let g1 = element_gradient(solution.mesh(), e, solution.level(k + 1));
    [(1.0 - theta) * g0[0] + theta * g1[0], (1.0 - theta) * g0[1] + theta * g1[1]]
}

/// `sqrt(∫_0^T |v - exact|²_{H¹} dt)` on the solution's own mesh and time grid.
pub fn l2h1_error(solution: &DiscreteSolution, exact: &dyn SpaceTimeField) -> f64 {
    space_time_gradient_norm(solution.mesh(), solution.timegrid(), |e, t, x| {
        let g = solution_gradient(solution, e, t);
        let r = exact.gradient(t, x);
        [g[0] - r[0], g[1] - r[1]]
    })
}

/// Gradient distance between a reference solution and another field,
/// integrated on the reference mesh and time grid. Intended for a reference
/// computed on a refinement of the other solution's mesh.
pub fn l2h1_distance(reference: &DiscreteSolution, other: &dyn SpaceTimeField) -> f64 {
    space_time_gradient_norm(reference.mesh(), reference.timegrid(), |e, t, x| {
        let g = solution_gradient(reference, e, t);
        let r = other.gradient(t, x);
        [g[0] - r[0], g[1] - r[1]]
    })
}

/// Errors per level with reduction factors between consecutive levels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ErrorReport>,
}

impl ConvergenceTable {
    pub fn linf_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.linf_error).collect()
    }

    pub fn l2h1_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.l2h1_error).collect()
    }

    /// `error[i - 1] / error[i]`, `NaN` when both vanish.
    pub fn reductions(errors: &[f64]) -> Vec<f64> {
        errors.windows(2).map(|w| w[0] / w[1]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "level,mesh_size,h,linf_error,l2h1_error,linf_reduction,l2h1_reduction")?;
        for (i, r) in self.rows.iter().enumerate() {
            let red = |f: fn(&ErrorReport) -> f64| {
                if i == 0 {
                    String::new()
                } else {
                    format!("{:.16e}", f(&self.rows[i - 1]) / f(r))
                }
            };
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                r.level,
                r.mesh_size,
                r.h,
                r.linf_error,
                r.l2h1_error,
                red(|r| r.linf_error),
                red(|r| r.l2h1_error)
            )?;
        }
        Ok(())
    }
}

/// Solves on each `(mesh, timegrid)` level and measures both errors against `exact`.
pub fn convergence_study(
    problem: &ControlProblem,
    splitting: &OperatorSplitting,
    levels: &[(Arc<Mesh>, TimeGrid)],
    exact: &dyn SpaceTimeField,
    options: SolverOptions,
) -> Result<ConvergenceTable> {
    if levels.len() < 2 {
        return Err(HjbError::Config("a convergence study needs at least two levels".into()));
    }
    let mut table = ConvergenceTable::default();
    for (i, (mesh, tg)) in levels.iter().enumerate() {
        let (solution, _) = backward_solve(problem, mesh, splitting, *tg, options)?;
        table.rows.push(ErrorReport {
            level: i,
            mesh_size: mesh.mesh_size(),
            h: tg.h(),
            linf_error: linf_error(&solution, exact),
            l2h1_error: l2h1_error(&solution, exact),
        });
    }
    Ok(table)
}

/// The one-dimensional eikonal benchmark on `(-1, 1)` with `ε = Δx/2` and
/// `h = Δx` for each node spacing in `spacings`.
pub fn eikonal_benchmark(mode: SplittingMode, spacings: &[f64], options: SolverOptions) -> Result<ConvergenceTable> {
    let problem = problems::eikonal_1d();
    let splitting = OperatorSplitting::new(&problem, mode, ArtificialDiffusion::MeshScaled(0.5))?;
    let levels = spacings
        .iter()
        .map(|&dx| {
            let n = (2.0 / dx).round() as usize;
            if n < 2 || ((2.0 / dx) - n as f64).abs() > 1e-9 {
                return Err(HjbError::Config(format!("spacing {dx} does not divide (-1, 1)")));
            }
            Ok((Arc::new(interval_mesh(-1.0, 1.0, n)?), TimeGrid::new(problem.horizon(), dx)?))
        })
        .collect::<Result<Vec<_>>>()?;
    convergence_study(&problem, &splitting, &levels, &problems::eikonal_exact(), options)
}

// 5-point Gauss-Legendre on [0, 1]
const GAUSS_EDGE: [(f64, f64); 5] = [
    (0.046_910_077_030_668_0, 0.118_463_442_528_094_5),
    (0.230_765_344_947_158_4, 0.239_314_335_249_683_2),
    (0.5, 0.284_444_444_444_444_4),
    (0.769_234_655_052_841_6, 0.239_314_335_249_683_2),
    (0.953_089_922_969_332_0, 0.118_463_442_528_094_5),
];

/// `∫_T ∇w` by the divergence theorem: the outward facet normal times facet
/// measure opposite vertex `k` is `-d vol ∇λ_k`.
fn integrated_gradient<F: Fn(Point) -> f64>(mesh: &Mesh, e: usize, w: &F) -> [f64; 2] {
    let el = &mesh.elements()[e];
    let d = mesh.dim() as f64;
    let p: Vec<Point> = el.vertices.iter().map(|&v| mesh.node(v)).collect();
    let mut out = [0.0; 2];
    for k in 0..el.vertices.len() {
        let others: Vec<Point> = (0..p.len()).filter(|&j| j != k).map(|j| p[j]).collect();
        let mean = if others.len() == 1 {
            w(others[0])
        } else {
            GAUSS_EDGE
                .iter()
                .map(|&(s, wt)| {
                    let x = [
                        (1.0 - s) * others[0][0] + s * others[1][0],
                        (1.0 - s) * others[0][1] + s * others[1][1],
                    ];
                    wt * w(x)
                })
                .sum()
        };
        out[0] -= d * el.volume * el.gradients[k][0] * mean;
        out[1] -= d * el.volume * el.gradients[k][1] * mean;
    }
    out
}

/// `<∇w, ∇φ_ℓ>` for every interior node.
pub fn stiffness_action<F: Fn(Point) -> f64 + Sync>(mesh: &Mesh, w: &F) -> Vec<f64> {
    let per_element: Vec<[f64; 2]> = (0..mesh.elements().len())
        .into_par_iter()
        .map(|e| integrated_gradient(mesh, e, w))
        .collect();
    (0..mesh.interior_count())
        .map(|l| {
            mesh.patch(l)
                .iter()
                .map(|&e| dot(per_element[e], mesh.elements()[e].gradient_of(l).expect("patch element contains node")))
                .sum()
        })
        .collect()
}

/// Discrete function with the same stiffness action as `w` on interior
/// hats and the nodal values of `w` on the boundary.
#[derive(Clone, Debug)]
pub struct EllipticProjection {
    pub values: Vec<f64>,
}

impl EllipticProjection {
    /// `max_ℓ |<∇(P w - w), ∇φ_ℓ>|` over interior nodes.
    pub fn orthogonality_residual<F: Fn(Point) -> f64 + Sync>(&self, mesh: &Mesh, w: &F) -> Result<f64> {
        let k = stiffness_matrix(mesh);
        let discrete = k.matvec(&self.values)?;
        let exact = stiffness_action(mesh, w);
        Ok(discrete.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

const PROJECTION_TOL: f64 = 1e-13;

pub fn elliptic_projection<F: Fn(Point) -> f64 + Sync>(mesh: &Mesh, w: &F) -> Result<EllipticProjection> {
    let n = mesh.interior_count();
    let mut values = mesh.interpolate(w);
    if n == 0 {
        return Ok(EllipticProjection { values });
    }
    let k = stiffness_matrix(mesh);
    let mut rhs = stiffness_action(mesh, w);
    // move the boundary columns to the right-hand side
    for (l, r) in rhs.iter_mut().enumerate() {
        for (j, v) in k.row(l) {
            if j >= n {
                *r -= v * values[j];
            }
        }
    }
    let interior = solve_mmatrix_system(&k.leading_block(n), &rhs, PROJECTION_TOL).map_err(|e| match e {
        HjbError::MMatrix(msg) => HjbError::Mesh(format!("stiffness matrix is singular: {msg}")),
        other => other,
    })?;
    values[..n].copy_from_slice(&interior);
    Ok(EllipticProjection { values })
}

/// One level of the consistency experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyProbe {
    pub pattern: Pattern,
    pub dx: f64,
    pub node: usize,
    /// `<∇ I w, ∇φ̂>` at the probe node.
    pub interpolant: f64,
    /// `<∇ P w, ∇φ̂>`.
    pub projection: f64,
    /// `<∇w, ∇φ̂>` by quadrature.
    pub exact_action: f64,
    /// `-Δw` at the probe point.
    pub reference: f64,
}

impl ConsistencyProbe {
    pub fn interpolant_ratio(&self) -> f64 {
        self.interpolant / self.reference
    }

    pub fn projection_ratio(&self) -> f64 {
        self.projection / self.reference
    }

    /// Ratio of the projection's discrete action to the exact stiffness action.
    pub fn orthogonality_ratio(&self) -> f64 {
        self.projection / self.exact_action
    }
}

/// Probes the normalised stiffness action of the interpolant and of the
/// elliptic projection of `w` at `probe` on unit-square meshes of `pattern`.
pub fn consistency_experiment(
    pattern: Pattern,
    w: &SmoothField,
    probe: Point,
    spacings: &[f64],
) -> Result<Vec<ConsistencyProbe>> {
    let reference = -(w.laplacian)(probe);
    if reference == 0.0 {
        return Err(HjbError::Config("the Laplacian of the test field vanishes at the probe".into()));
    }
    let value = |x: Point| (w.value)(x);
    spacings
        .iter()
        .map(|&dx| {
            let n = (1.0 / dx).round() as usize;
            if n < 2 || ((1.0 / dx) - n as f64).abs() > 1e-9 {
                return Err(HjbError::Config(format!("spacing {dx} does not divide the unit square")));
            }
            let mesh = patterned_rectangle_mesh(Rect::unit(), n, n, pattern)?;
            let node = mesh
                .find_node(probe, 1e-9 * dx)
                .filter(|&l| mesh.is_interior(l))
                .ok_or_else(|| HjbError::Config(format!("probe ({}, {}) is not an interior node at dx = {dx}", probe[0], probe[1])))?;
            let k = stiffness_matrix(&mesh);
            let l1 = mesh.hat_l1_norm(node);
            let row_action = |v: &[f64]| k.row(node).map(|(j, kv)| kv * v[j]).sum::<f64>() / l1;
            let interp = mesh.interpolate(value);
            let projection = elliptic_projection(&mesh, &value)?;
            let exact_action = stiffness_action(&mesh, &value)[node] / l1;
            Ok(ConsistencyProbe {
                pattern,
                dx,
                node,
                interpolant: row_action(&interp),
                projection: row_action(&projection.values),
                exact_action,
                reference,
            })
        })
        .collect()
}

/// CSV with columns `dx, measured, reference, ratio` plus projection columns.
pub fn write_consistency_csv<W: Write>(probes: &[ConsistencyProbe], mut out: W) -> Result<()> {
    writeln!(
        out,
        "pattern,dx,measured,reference,ratio,projection,projection_ratio,exact_action,orthogonality_ratio"
    )?;
    for p in probes {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p.pattern,
            p.dx,
            p.interpolant,
            p.reference,
            p.interpolant_ratio(),
            p.projection,
            p.projection_ratio(),
            p.exact_action,
            p.orthogonality_ratio()
        )?;
    }
    Ok(())
}

/// `|w|²_{H¹}` of a nodal P1 function.
pub fn h1_seminorm_sq(mesh: &Mesh, w: &[f64]) -> f64 {
    (0..mesh.elements().len())
        .map(|e| {
            let g = element_gradient(mesh, e, w);
            mesh.elements()[e].volume * dot(g, g)
        })
        .sum()
}

/// `‖w‖²_{L²}` of a nodal P1 function (exact mass matrix).
pub fn l2_norm_sq(mesh: &Mesh, w: &[f64]) -> f64 {
    let d = mesh.dim() as f64;
    mesh.elements()
        .iter()
        .map(|el| {
            let sum: f64 = el.vertices.iter().map(|&v| w[v]).sum();
            let sq: f64 = el.vertices.iter().map(|&v| w[v] * w[v]).sum();
            el.volume * (sq + sum * sum) / ((d + 1.0) * (d + 2.0))
        })
        .sum()
}

/// Smallest ratio over `trials` of the discrete energy pairing of control
/// `control` to `|w|²_{L²(H¹)}`. Each trial is indexed `[level][node]`,
/// non-negative and zero on the boundary. Trials with zero seminorm are
/// skipped; `None` if every trial was skipped.
pub fn coercivity_probe(
    ops: &DiscreteOperatorSet,
    mesh: &Mesh,
    timegrid: TimeGrid,
    control: usize,
    trials: &[Vec<Vec<f64>>],
) -> Result<Option<f64>> {
    if control >= ops.control_count() {
        return Err(HjbError::Config(format!("no control with index {control}")));
    }
    let n = mesh.interior_count();
    let h = timegrid.h();
    let steps = timegrid.steps();
    let weights: Vec<f64> = (0..n).map(|l| mesh.hat_l1_norm(l)).collect();
    let mut best: Option<f64> = None;
    for trial in trials {
        if trial.len() != steps + 1 {
            return Err(HjbError::DimensionMismatch {
                expected: steps + 1,
                found: trial.len(),
            });
        }
        for level in trial {
            if level.len() != mesh.node_count() {
                return Err(HjbError::DimensionMismatch {
                    expected: mesh.node_count(),
                    found: level.len(),
                });
            }
            if level.iter().any(|&v| v < 0.0) || level[n..].iter().any(|&v| v != 0.0) {
                return Err(HjbError::Config(
                    "coercivity trials must be non-negative and vanish on the boundary".into(),
                ));
            }
        }
        let mut seminorm = 0.0;
        for k in 0..steps {
            let mut local = 0.0;
            for e in 0..mesh.elements().len() {
                let g0 = element_gradient(mesh, e, &trial[k]);
                let g1 = element_gradient(mesh, e, &trial[k + 1]);
                local += mesh.elements()[e].volume * (dot(g0, g0) + dot(g0, g1) + dot(g1, g1)) / 3.0;
            }
            seminorm += h * local;
        }
        if seminorm == 0.0 {
            continue;
        }
        let mut energy = 0.0;
        for k in 0..steps {
            let e_next = ops.apply(control, Part::Explicit, &trial[k + 1])?;
            let i_curr = ops.apply(control, Part::Implicit, &trial[k])?;
            for l in 0..n {
                let w = trial[k][l];
                energy += weights[l] * w * (h * e_next[l] - trial[k + 1][l] + h * i_curr[l] + w);
            }
        }
        let last = &trial[steps];
        energy += 0.5 * (0..n).map(|l| weights[l] * last[l] * last[l]).sum::<f64>();
        energy += l2_norm_sq(mesh, last) + h1_seminorm_sq(mesh, last);
        let ratio = energy / seminorm;
        best = Some(best.map_or(ratio, |b: f64| b.min(ratio)));
    }
    Ok(best)
}
