//! Backward time stepping of the discrete Bellman system with Howard's
//! policy iteration, plus fixed-control linear evolutions.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{assemble, certify_monotonicity, DiscreteOperatorSet, MonotonicityReport, Part};
use crate::control::{compute_diffusion_budget, ControlProblem, OperatorSplitting};
use crate::error::{HjbError, Result};
use crate::field::SpaceTimeField;
use crate::mesh::{Mesh, Point, PointLocator};
use crate::sparse::{inf_norm, CsrMatrix, Factorization};

/// Uniform time levels `s^k = k h`, `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    h: f64,
    steps: usize,
}

impl TimeGrid {
    /// `horizon / h` must be a positive integer (up to rounding).
    pub fn new(horizon: f64, h: f64) -> Result<TimeGrid> {
        if !(horizon > 0.0) || !(h > 0.0) || !horizon.is_finite() {
            return Err(HjbError::Config(format!("invalid time grid: T = {horizon}, h = {h}")));
        }
        let ratio = horizon / h;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(HjbError::Config(format!(
                "T / h = {ratio} is not a positive integer (T = {horizon}, h = {h})"
            )));
        }
        Ok(TimeGrid {
            h: horizon / steps,
            steps: steps as usize,
        })
    }

    pub fn with_steps(horizon: f64, steps: usize) -> Result<TimeGrid> {
        if steps == 0 || !(horizon > 0.0) {
            return Err(HjbError::Config(format!("invalid time grid: T = {horizon}, {steps} steps")));
        }
        Ok(TimeGrid {
            h: horizon / steps as f64,
            steps,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.h * self.steps as f64
    }

    pub fn level(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon()
        } else {
            k as f64 * self.h
        }
    }
}

/// Nodal values at every time level with space-time P1 × affine interpolation.
#[derive(Clone)]
pub struct DiscreteSolution {
    mesh: Arc<Mesh>,
    locator: Arc<PointLocator>,
    timegrid: TimeGrid,
    values: Vec<Vec<f64>>,
}

impl std::fmt::Debug for DiscreteSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteSolution")
            .field("nodes", &self.mesh.node_count())
            .field("timegrid", &self.timegrid)
            .finish()
    }
}

impl DiscreteSolution {
    pub fn new(mesh: Arc<Mesh>, timegrid: TimeGrid, values: Vec<Vec<f64>>) -> Result<DiscreteSolution> {
        if values.len() != timegrid.steps() + 1 {
            return Err(HjbError::DimensionMismatch {
                expected: timegrid.steps() + 1,
                found: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| v.len() != mesh.node_count()) {
            return Err(HjbError::DimensionMismatch {
                expected: mesh.node_count(),
                found: v.len(),
            });
        }
        let locator = Arc::new(PointLocator::new(&mesh));
        Ok(DiscreteSolution {
            mesh,
            locator,
            timegrid,
            values,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn timegrid(&self) -> TimeGrid {
        self.timegrid
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    fn time_weights(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = self.timegrid.horizon();
        if !(t >= -1e-12 && t <= horizon * (1.0 + 1e-12)) {
            return Err(HjbError::Query(format!("time {t} outside [0, {horizon}]")));
        }
        let steps = self.timegrid.steps();
        let k = ((t / self.timegrid.h()).floor().max(0.0) as usize).min(steps - 1);
        let theta = ((t - self.timegrid.level(k)) / self.timegrid.h()).clamp(0.0, 1.0);
        Ok((k, theta))
    }

    fn locate(&self, x: Point) -> Result<(usize, Vec<f64>)> {
        self.locator
            .locate(&self.mesh, x)
            .ok_or_else(|| HjbError::Query(format!("point ({}, {}) outside the mesh", x[0], x[1])))
    }

    /// Value at `(t, x)`.
    pub fn evaluate(&self, t: f64, x: Point) -> Result<f64> {
        let (k, theta) = self.time_weights(t)?;
        let (e, lam) = self.locate(x)?;
        let verts = &self.mesh.elements()[e].vertices;
        let at = |level: &[f64]| verts.iter().zip(&lam).map(|(&v, l)| level[v] * l).sum::<f64>();
        let lo = at(&self.values[k]);
        if theta == 0.0 {
            return Ok(lo);
        }
        Ok((1.0 - theta) * lo + theta * at(&self.values[k + 1]))
    }

    /// Spatial gradient at `(t, x)` (elementwise constant in space).
    pub fn evaluate_gradient(&self, t: f64, x: Point) -> Result<[f64; 2]> {
        let (k, theta) = self.time_weights(t)?;
        let (e, _) = self.locate(x)?;
        let el = &self.mesh.elements()[e];
        let mut g = [0.0; 2];
        for (&v, gv) in el.vertices.iter().zip(&el.gradients) {
            let val = (1.0 - theta) * self.values[k][v] + theta * self.values[k + 1][v];
            g[0] += val * gv[0];
            g[1] += val * gv[1];
        }
        Ok(g)
    }

    /// CSV with columns `k, s, node, x[, y], value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.mesh.dim();
        if dim == 1 {
            writeln!(out, "k,s,node,x,value")?;
        } else {
            writeln!(out, "k,s,node,x,y,value")?;
        }
        for (k, level) in self.values.iter().enumerate() {
            let s = self.timegrid.level(k);
            for (node, v) in level.iter().enumerate() {
                let p = self.mesh.node(node);
                if dim == 1 {
                    writeln!(out, "{k},{s:.16e},{node},{:.16e},{v:.16e}", p[0])?;
                } else {
                    writeln!(out, "{k},{s:.16e},{node},{:.16e},{:.16e},{v:.16e}", p[0], p[1])?;
                }
            }
        }
        Ok(())
    }
}

impl SpaceTimeField for DiscreteSolution {
    /// Outside the mesh the field reads as zero.
    fn value(&self, t: f64, x: Point) -> f64 {
        self.evaluate(t, x).unwrap_or(0.0)
    }

    fn gradient(&self, t: f64, x: Point) -> [f64; 2] {
        self.evaluate_gradient(t, x).unwrap_or([0.0, 0.0])
    }
}

/// Policy iteration record for one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub k: usize,
    pub iterations: usize,
    /// Sup-norm Bellman residual after each linear solve.
    pub residuals: Vec<f64>,
    /// Selected control per interior node.
    pub policy: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyIterationReport {
    /// One entry per time level, in the order computed (`k` descending).
    pub steps: Vec<StepReport>,
}

impl PolicyIterationReport {
    pub fn max_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).max().unwrap_or(0)
    }

    pub fn final_residual(&self) -> f64 {
        self.steps
            .iter()
            .filter_map(|s| s.residuals.last())
            .copied()
            .fold(0.0, f64::max)
    }

    /// CSV with columns `k, iteration, residual`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,iteration,residual")?;
        for s in &self.steps {
            for (i, r) in s.residuals.iter().enumerate() {
                writeln!(out, "{},{},{r:.16e}", s.k, i + 1)?;
            }
        }
        Ok(())
    }

    /// CSV with columns `k, node, control_index`.
    pub fn write_policy_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,node,control_index")?;
        for s in &self.steps {
            for (node, c) in s.policy.iter().enumerate() {
                writeln!(out, "{},{node},{c}", s.k)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Bellman residual tolerance; `None` uses `1e-10 (1 + max |C|)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: None, max_iter: 50 }
    }
}

impl SolverOptions {
    pub fn resolved_tol(&self, ops: &DiscreteOperatorSet) -> f64 {
        self.tol.unwrap_or_else(|| {
            let c = (0..ops.control_count()).map(|a| inf_norm(ops.source(a))).fold(0.0, f64::max);
            1e-10 * (1.0 + c)
        })
    }
}

/// Rows of `E`, `I`, `C` copied from the control selected at each node.
#[derive(Clone, Debug)]
pub struct PolicyRows {
    pub explicit: CsrMatrix,
    pub implicit: CsrMatrix,
    pub source: Vec<f64>,
}

impl PolicyRows {
    pub fn gather(ops: &DiscreteOperatorSet, policy: &[usize]) -> PolicyRows {
        let pick = |part: Part| {
            let rows = policy
                .iter()
                .enumerate()
                .map(|(l, &a)| ops.matrix(a, part).row(l).collect())
                .collect();
            CsrMatrix::from_rows(ops.node_count(), rows)
        };
        PolicyRows {
            explicit: pick(Part::Explicit),
            implicit: pick(Part::Implicit),
            source: policy.iter().enumerate().map(|(l, &a)| ops.source(a)[l]).collect(),
        }
    }
}

fn check_len(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(HjbError::DimensionMismatch {
            expected: n,
            found: v.len(),
        });
    }
    Ok(())
}

/// `(E^α v_next + I^α v_curr - C^α)` for every control, `[control][interior node]`.
fn hamiltonian_terms(ops: &DiscreteOperatorSet, v_next: &[f64], v_curr: &[f64]) -> Result<Vec<Vec<f64>>> {
    (0..ops.control_count())
        .into_par_iter()
        .map(|a| {
            let mut t = ops.apply(a, Part::Explicit, v_next)?;
            if !ops.matrix(a, Part::Implicit).is_zero() {
                let i = ops.apply(a, Part::Implicit, v_curr)?;
                t.iter_mut().zip(&i).for_each(|(x, y)| *x += y);
            }
            t.iter_mut().zip(ops.source(a)).for_each(|(x, c)| *x -= c);
            Ok(t)
        })
        .collect()
}

fn argmax_policy(terms: &[Vec<f64>], n: usize) -> Vec<usize> {
    (0..n)
        .map(|l| {
            let mut best = 0;
            for a in 1..terms.len() {
                // strict comparison keeps the lowest index on ties
                if terms[a][l] > terms[best][l] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// Per-node maximising control of `E v_next + I v_curr - C` (ties go to
/// the lowest index) and the rows of the selected operators.
pub fn select_policy(ops: &DiscreteOperatorSet, v_next: &[f64], v_curr: &[f64]) -> Result<(Vec<usize>, PolicyRows)> {
    if ops.control_count() == 0 {
        return Err(HjbError::Config("control list is empty".into()));
    }
    check_len(v_next, ops.node_count())?;
    check_len(v_curr, ops.node_count())?;
    let terms = hamiltonian_terms(ops, v_next, v_curr)?;
    let policy = argmax_policy(&terms, ops.interior_count());
    let rows = PolicyRows::gather(ops, &policy);
    Ok((policy, rows))
}

/// Sup-norm residual of the discrete Bellman equation
/// `(v_curr - v_next)/h + max_α (E v_next + I v_curr - C) = 0` over interior nodes.
pub fn bellman_residual(ops: &DiscreteOperatorSet, v_next: &[f64], v_curr: &[f64], h: f64) -> Result<f64> {
    check_len(v_next, ops.node_count())?;
    check_len(v_curr, ops.node_count())?;
    let terms = hamiltonian_terms(ops, v_next, v_curr)?;
    Ok((0..ops.interior_count())
        .map(|l| {
            let sup = terms.iter().map(|t| t[l]).fold(f64::NEG_INFINITY, f64::max);
            ((v_curr[l] - v_next[l]) / h + sup).abs()
        })
        .fold(0.0, f64::max))
}

fn residual_with_policy(terms: &[Vec<f64>], v_next: &[f64], v_curr: &[f64], h: f64, n: usize) -> f64 {
    (0..n)
        .map(|l| {
            let sup = terms.iter().map(|t| t[l]).fold(f64::NEG_INFINITY, f64::max);
            ((v_curr[l] - v_next[l]) / h + sup).abs()
        })
        .fold(0.0, f64::max)
}

/// Reuses the factorisation of `h I^π + Id` while the policy repeats.
#[derive(Default)]
struct FactorCache {
    entry: Option<(Vec<usize>, CsrMatrix, Factorization)>,
}

impl FactorCache {
    fn solve(&mut self, policy: &[usize], rows: &PolicyRows, h: f64, n: usize, rhs: &[f64]) -> Result<Vec<f64>> {
        let hit = matches!(&self.entry, Some((p, _, _)) if p.as_slice() == policy);
        if !hit {
            let m = rows.implicit.leading_block(n).scaled_plus_identity(h);
            let f = Factorization::new(&m)?;
            self.entry = Some((policy.to_vec(), m, f));
        }
        let (_, m, f) = self.entry.as_ref().expect("cache filled above");
        f.solve(m, rhs, LINEAR_TOL)
    }
}

const LINEAR_TOL: f64 = 1e-12;

/// Right-hand side `h C - h E v_next + v_next` on interior rows.
fn step_rhs(rows: &PolicyRows, v_next: &[f64], h: f64) -> Result<Vec<f64>> {
    let ev = rows.explicit.matvec(v_next)?;
    Ok(ev
        .iter()
        .zip(&rows.source)
        .enumerate()
        .map(|(l, (e, c))| h * c - h * e + v_next[l])
        .collect())
}

fn extend_with_boundary(mut interior: Vec<f64>, node_count: usize) -> Vec<f64> {
    interior.resize(node_count, 0.0);
    interior
}

fn howard_step_cached(
    ops: &DiscreteOperatorSet,
    v_next: &[f64],
    h: f64,
    tol: f64,
    max_iter: usize,
    k: usize,
    cache: &mut FactorCache,
) -> Result<(Vec<f64>, StepReport)> {
    let n = ops.interior_count();
    let nodes = ops.node_count();
    check_len(v_next, nodes)?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(HjbError::Config("tolerance must be positive and max_iter at least 1".into()));
    }
    if ops.is_explicit() {
        let terms = hamiltonian_terms(ops, v_next, v_next)?;
        let policy = argmax_policy(&terms, n);
        let interior: Vec<f64> = (0..n).map(|l| v_next[l] - h * terms[policy[l]][l]).collect();
        let v = extend_with_boundary(interior, nodes);
        let residual = bellman_residual(ops, v_next, &v, h)?;
        return Ok((
            v,
            StepReport {
                k,
                iterations: 1,
                residuals: vec![residual],
                policy,
            },
        ));
    }
    let mut policy = vec![0usize; n];
    let mut residuals = Vec::new();
    loop {
        let rows = PolicyRows::gather(ops, &policy);
        let rhs = step_rhs(&rows, v_next, h)?;
        let w = extend_with_boundary(cache.solve(&policy, &rows, h, n, &rhs)?, nodes);
        let terms = hamiltonian_terms(ops, v_next, &w)?;
        let residual = residual_with_policy(&terms, v_next, &w, h, n);
        residuals.push(residual);
        let next = argmax_policy(&terms, n);
        if residual <= tol || next == policy {
            return Ok((
                w,
                StepReport {
                    k,
                    iterations: residuals.len(),
                    residuals,
                    policy,
                },
            ));
        }
        if residuals.len() >= max_iter {
            return Err(HjbError::NonConvergence {
                iterations: residuals.len(),
                last: residual,
                residuals,
            });
        }
        policy = next;
    }
}

/// One time level of the Bellman system by policy iteration. The explicit
/// case (all `I^α = 0`) is a single upwind sweep.
pub fn howard_solve_step(
    ops: &DiscreteOperatorSet,
    v_next: &[f64],
    h: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, StepReport)> {
    howard_step_cached(ops, v_next, h, tol, max_iter, 0, &mut FactorCache::default())
}

/// Backward evolution from nodal final data using pre-assembled operators.
pub fn solve_with_operators(
    ops: &DiscreteOperatorSet,
    mesh: &Arc<Mesh>,
    final_values: Vec<f64>,
    timegrid: TimeGrid,
    options: SolverOptions,
) -> Result<(DiscreteSolution, PolicyIterationReport)> {
    check_len(&final_values, ops.node_count())?;
    if ops.node_count() != mesh.node_count() || ops.interior_count() != mesh.interior_count() {
        return Err(HjbError::DimensionMismatch {
            expected: mesh.node_count(),
            found: ops.node_count(),
        });
    }
    let tol = options.resolved_tol(ops);
    let h = timegrid.h();
    let steps = timegrid.steps();
    let mut values = vec![Vec::new(); steps + 1];
    values[steps] = final_values;
    let mut report = PolicyIterationReport::default();
    let mut cache = FactorCache::default();
    for k in (0..steps).rev() {
        let (v, step) = howard_step_cached(ops, &values[k + 1], h, tol, options.max_iter, k, &mut cache)?;
        values[k] = v;
        report.steps.push(step);
    }
    Ok((DiscreteSolution::new(Arc::clone(mesh), timegrid, values)?, report))
}

/// Linear backward evolution with the control frozen to `control`.
pub fn fixed_control_with_operators(
    ops: &DiscreteOperatorSet,
    mesh: &Arc<Mesh>,
    final_values: Vec<f64>,
    timegrid: TimeGrid,
    control: usize,
) -> Result<DiscreteSolution> {
    if control >= ops.control_count() {
        return Err(HjbError::Config(format!("no control with index {control}")));
    }
    check_len(&final_values, ops.node_count())?;
    let n = ops.interior_count();
    let h = timegrid.h();
    let steps = timegrid.steps();
    let policy = vec![control; n];
    let rows = PolicyRows::gather(ops, &policy);
    let mut cache = FactorCache::default();
    let mut values = vec![Vec::new(); steps + 1];
    values[steps] = final_values;
    for k in (0..steps).rev() {
        let rhs = step_rhs(&rows, &values[k + 1], h)?;
        let interior = if rows.implicit.is_zero() {
            rhs
        } else {
            cache.solve(&policy, &rows, h, n, &rhs)?
        };
        values[k] = extend_with_boundary(interior, ops.node_count());
    }
    DiscreteSolution::new(Arc::clone(mesh), timegrid, values)
}

/// Operators for `problem` on `mesh`, certified for the step of `timegrid`.
pub fn prepare(
    problem: &ControlProblem,
    mesh: &Mesh,
    splitting: &OperatorSplitting,
    timegrid: TimeGrid,
) -> Result<(DiscreteOperatorSet, MonotonicityReport)> {
    problem.validate(mesh)?;
    if splitting.control_count() != problem.control_count() {
        return Err(HjbError::Config("splitting was built for a different problem".into()));
    }
    let budget = compute_diffusion_budget(mesh, splitting, &mesh.acuteness_certificate())?;
    let ops = assemble(mesh, splitting, &budget)?;
    let report = certify_monotonicity(&ops, timegrid.h())?;
    if let Some(reason) = report.failure() {
        return Err(HjbError::Certification(reason));
    }
    Ok((ops, report))
}

/// Full backward solve: budget, assembly, certification, time stepping.
pub fn backward_solve(
    problem: &ControlProblem,
    mesh: &Arc<Mesh>,
    splitting: &OperatorSplitting,
    timegrid: TimeGrid,
    options: SolverOptions,
) -> Result<(DiscreteSolution, PolicyIterationReport)> {
    let (ops, _) = prepare(problem, mesh, splitting, timegrid)?;
    let final_values = final_nodal_values(problem, mesh);
    solve_with_operators(&ops, mesh, final_values, timegrid, options)
}

/// Backward solve with the control frozen.
pub fn fixed_control_solve(
    problem: &ControlProblem,
    mesh: &Arc<Mesh>,
    splitting: &OperatorSplitting,
    timegrid: TimeGrid,
    control: usize,
) -> Result<DiscreteSolution> {
    let (ops, _) = prepare(problem, mesh, splitting, timegrid)?;
    fixed_control_with_operators(&ops, mesh, final_nodal_values(problem, mesh), timegrid, control)
}

/// Interpolant of the final data with boundary entries forced to zero.
pub fn final_nodal_values(problem: &ControlProblem, mesh: &Mesh) -> Vec<f64> {
    let mut v = mesh.interpolate(|x| problem.final_data().eval(x));
    v[mesh.interior_count()..].iter_mut().for_each(|x| *x = 0.0);
    v
}
