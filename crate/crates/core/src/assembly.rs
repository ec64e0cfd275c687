//! Assembly of the per-control operators `E^α`, `I^α`, `C^α` and their
//! structural certification.
//!
//! Row `ℓ` (interior node) of a part with nodal diffusion `A_ℓ` realises
//! `A_ℓ <∇w, ∇φ̂_ℓ> + <b·∇w + c w, φ̂_ℓ>` where `φ̂_ℓ` is the L1-normalised
//! hat. Stiffness terms are exact. The fields `b`, `c`, `d` are replaced by
//! their P1 interpolants on each element and the remaining polynomial
//! integrals are evaluated in closed form, so affine data is integrated
//! exactly. The reaction term uses the consistent mass.

use std::io::Write;

use rayon::prelude::*;

use crate::control::{DiffusionBudget, OperatorSplitting, PartFields};
use crate::error::{HjbError, Result};
use crate::field::ScalarField;
use crate::mesh::{dot, Mesh};
use crate::sparse::CsrMatrix;

/// Which half of the splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Explicit,
    Implicit,
}

#[derive(Clone, Debug)]
pub struct DiscreteOperatorSet {
    interior_count: usize,
    node_count: usize,
    explicit: Vec<CsrMatrix>,
    implicit: Vec<CsrMatrix>,
    source: Vec<Vec<f64>>,
}

/// `∫_T λ_i λ_j` for a simplex of dimension `dim`.
fn mass2(dim: usize, volume: f64, same: bool) -> f64 {
    let d = dim as f64;
    volume * if same { 2.0 } else { 1.0 } / ((d + 1.0) * (d + 2.0))
}

/// `∫_T λ_i λ_j λ_k` via `d! vol Π n_m! / (d + 3)!`.
fn mass3(dim: usize, volume: f64, i: usize, j: usize, k: usize) -> f64 {
    let mut counts = [0usize; 3];
    for idx in [i, j, k] {
        counts[idx] += 1;
    }
    let fact = |n: usize| (1..=n).product::<usize>() as f64;
    let numer: f64 = counts.iter().map(|&n| fact(n)).product();
    fact(dim) * volume * numer / fact(dim + 3)
}

fn assemble_part(mesh: &Mesh, part: &PartFields, diffusion: &[f64]) -> CsrMatrix {
    let dim = mesh.dim();
    let n_int = mesh.interior_count();
    let part_is_zero = part.b.is_identically_zero()
        && part.c.is_identically_zero()
        && diffusion.iter().all(|&a| a == 0.0);
    if part_is_zero {
        return CsrMatrix::zeros(n_int, mesh.node_count());
    }
    // P1 nodal values of b and c
    let b_nodal: Vec<[f64; 2]> = mesh.nodes().iter().map(|&x| part.b.eval(x)).collect();
    let c_nodal: Vec<f64> = if part.c.is_identically_zero() {
        vec![0.0; mesh.node_count()]
    } else {
        mesh.nodes().iter().map(|&x| part.c.eval(x)).collect()
    };
    let rows: Vec<Vec<(usize, f64)>> = (0..n_int)
        .into_par_iter()
        .map(|l| {
            let inv_l1 = 1.0 / mesh.hat_l1_norm(l);
            let mut row = Vec::new();
            for &e in mesh.patch(l) {
                let el = &mesh.elements()[e];
                let kl = el.local_index(l).expect("patch element contains node");
                let gl = el.gradients[kl];
                // ∫_T b φ_ℓ with P1 b
                let mut b_weighted = [0.0; 2];
                for (k, &v) in el.vertices.iter().enumerate() {
                    let m = mass2(dim, el.volume, k == kl);
                    b_weighted[0] += b_nodal[v][0] * m;
                    b_weighted[1] += b_nodal[v][1] * m;
                }
                for (kj, &j) in el.vertices.iter().enumerate() {
                    let gj = el.gradients[kj];
                    let mut value = diffusion[l] * dot(gj, gl) * el.volume + dot(b_weighted, gj);
                    for (k, &v) in el.vertices.iter().enumerate() {
                        if c_nodal[v] != 0.0 {
                            value += c_nodal[v] * mass3(dim, el.volume, k, kj, kl);
                        }
                    }
                    row.push((j, value * inv_l1));
                }
            }
            row
        })
        .collect();
    CsrMatrix::from_rows(mesh.node_count(), rows)
}

fn assemble_source(mesh: &Mesh, d: &ScalarField) -> Vec<f64> {
    let dim = mesh.dim();
    let d_nodal: Vec<f64> = mesh.nodes().iter().map(|&x| d.eval(x)).collect();
    (0..mesh.interior_count())
        .map(|l| {
            let mut s = 0.0;
            for &e in mesh.patch(l) {
                let el = &mesh.elements()[e];
                let kl = el.local_index(l).expect("patch element contains node");
                for (k, &v) in el.vertices.iter().enumerate() {
                    s += d_nodal[v] * mass2(dim, el.volume, k == kl);
                }
            }
            s / mesh.hat_l1_norm(l)
        })
        .collect()
}

/// Assembles `E^α`, `I^α`, `C^α` for every control.
pub fn assemble(mesh: &Mesh, splitting: &OperatorSplitting, budget: &DiffusionBudget) -> Result<DiscreteOperatorSet> {
    if !budget.matches(mesh) {
        return Err(HjbError::Config("diffusion budget was computed on a different mesh".into()));
    }
    if budget.nu_explicit.len() != splitting.control_count() {
        return Err(HjbError::Config("diffusion budget and splitting disagree on the control count".into()));
    }
    let per_control: Vec<(CsrMatrix, CsrMatrix, Vec<f64>)> = (0..splitting.control_count())
        .into_par_iter()
        .map(|alpha| {
            (
                assemble_part(mesh, splitting.explicit(alpha), &budget.diffusion_explicit[alpha]),
                assemble_part(mesh, splitting.implicit(alpha), &budget.diffusion_implicit[alpha]),
                assemble_source(mesh, splitting.source(alpha)),
            )
        })
        .collect();
    let mut ops = DiscreteOperatorSet {
        interior_count: mesh.interior_count(),
        node_count: mesh.node_count(),
        explicit: Vec::new(),
        implicit: Vec::new(),
        source: Vec::new(),
    };
    for (e, i, c) in per_control {
        ops.explicit.push(e);
        ops.implicit.push(i);
        ops.source.push(c);
    }
    Ok(ops)
}

/// P1 stiffness rows `<∇φ_j, ∇φ_ℓ>` for interior `ℓ` (unnormalised).
pub fn stiffness_matrix(mesh: &Mesh) -> CsrMatrix {
    let rows = (0..mesh.interior_count())
        .map(|l| {
            let mut row = Vec::new();
            for &e in mesh.patch(l) {
                let el = &mesh.elements()[e];
                let gl = el.gradient_of(l).expect("patch element contains node");
                for (kj, &j) in el.vertices.iter().enumerate() {
                    row.push((j, dot(el.gradients[kj], gl) * el.volume));
                }
            }
            row
        })
        .collect();
    CsrMatrix::from_rows(mesh.node_count(), rows)
}

impl DiscreteOperatorSet {
    /// Builds an operator set directly from matrices (rows = interior nodes,
    /// columns = all nodes).
    pub fn from_parts(
        interior_count: usize,
        node_count: usize,
        explicit: Vec<CsrMatrix>,
        implicit: Vec<CsrMatrix>,
        source: Vec<Vec<f64>>,
    ) -> Result<DiscreteOperatorSet> {
        let k = explicit.len();
        if k == 0 {
            return Err(HjbError::Config("control list is empty".into()));
        }
        if implicit.len() != k || source.len() != k {
            return Err(HjbError::Config("operator lists have different lengths".into()));
        }
        for m in explicit.iter().chain(&implicit) {
            if m.nrows() != interior_count || m.ncols() != node_count {
                return Err(HjbError::DimensionMismatch {
                    expected: interior_count * node_count,
                    found: m.nrows() * m.ncols(),
                });
            }
        }
        if let Some(c) = source.iter().find(|c| c.len() != interior_count) {
            return Err(HjbError::DimensionMismatch {
                expected: interior_count,
                found: c.len(),
            });
        }
        Ok(DiscreteOperatorSet {
            interior_count,
            node_count,
            explicit,
            implicit,
            source,
        })
    }

    pub fn control_count(&self) -> usize {
        self.explicit.len()
    }

    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn matrix(&self, control: usize, part: Part) -> &CsrMatrix {
        match part {
            Part::Explicit => &self.explicit[control],
            Part::Implicit => &self.implicit[control],
        }
    }

    pub fn source(&self, control: usize) -> &[f64] {
        &self.source[control]
    }

    /// True when every implicit operator vanishes.
    pub fn is_explicit(&self) -> bool {
        self.implicit.iter().all(CsrMatrix::is_zero)
    }

    /// Applies `E^α` or `I^α` to a nodal vector, returning interior values.
    pub fn apply(&self, control: usize, part: Part, w: &[f64]) -> Result<Vec<f64>> {
        if control >= self.control_count() {
            return Err(HjbError::Config(format!("no control with index {control}")));
        }
        if w.len() != self.node_count {
            return Err(HjbError::DimensionMismatch {
                expected: self.node_count,
                found: w.len(),
            });
        }
        self.matrix(control, part).matvec(w)
    }

    /// Writes `row col value` triplets (1-based) of one operator.
    pub fn dump<W: Write>(&self, control: usize, part: Part, mut out: W) -> Result<()> {
        for (i, j, v) in self.matrix(control, part).triplets() {
            writeln!(out, "{} {} {:.16e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// First violation found for one control.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct ControlCertificate {
    /// Off-diagonals of `E^α` are non-positive.
    pub explicit_offdiag_ok: bool,
    pub explicit_violation: Option<Violation>,
    /// `I^α` has non-positive off-diagonals and non-negative row sums.
    pub lmp_ok: bool,
    pub lmp_violation: Option<Violation>,
    /// `h I^α + Id` on the interior block is a strictly diagonally dominant
    /// matrix with non-positive off-diagonals.
    pub mmatrix_ok: bool,
    /// Smallest positive diagonal of `E^α`.
    pub max_diag_explicit: f64,
}

#[derive(Clone, Debug)]
pub struct MonotonicityReport {
    pub h: f64,
    pub controls: Vec<ControlCertificate>,
    /// Largest `h` for which every `h E^α - Id` is entrywise non-positive.
    pub max_stable_h: f64,
}

const SIGN_RTOL: f64 = 1e-12;

impl MonotonicityReport {
    pub fn admissible(&self) -> bool {
        self.controls
            .iter()
            .all(|c| c.explicit_offdiag_ok && c.lmp_ok && c.mmatrix_ok)
            && self.h <= self.max_stable_h * (1.0 + SIGN_RTOL)
    }

    /// Human-readable reason for rejection, if any.
    pub fn failure(&self) -> Option<String> {
        for (alpha, c) in self.controls.iter().enumerate() {
            if let Some(v) = &c.explicit_violation {
                return Some(format!(
                    "control {alpha}: explicit operator has positive off-diagonal {:.6e} at row {}, column {}",
                    v.value, v.row, v.col
                ));
            }
            if let Some(v) = &c.lmp_violation {
                return Some(format!(
                    "control {alpha}: implicit operator violates the local monotonicity criterion at row {} (column {}, value {:.6e})",
                    v.row, v.col, v.value
                ));
            }
            if !c.mmatrix_ok {
                return Some(format!("control {alpha}: h I + Id is not strictly diagonally dominant"));
            }
        }
        if self.h > self.max_stable_h * (1.0 + SIGN_RTOL) {
            return Some(format!(
                "time step {} exceeds the explicit stability limit {}",
                self.h, self.max_stable_h
            ));
        }
        None
    }
}

fn row_scale(m: &CsrMatrix, i: usize) -> f64 {
    m.row(i).fold(0.0, |s, (_, v)| s.max(v.abs()))
}

/// Checks the sign structure required for a monotone scheme at time step `h`.
pub fn certify_monotonicity(ops: &DiscreteOperatorSet, h: f64) -> Result<MonotonicityReport> {
    if !(h > 0.0) {
        return Err(HjbError::Config(format!("time step must be positive, got {h}")));
    }
    let n = ops.interior_count;
    let mut max_stable_h = f64::INFINITY;
    let mut controls = Vec::new();
    for alpha in 0..ops.control_count() {
        let e = &ops.explicit[alpha];
        let im = &ops.implicit[alpha];
        let mut explicit_violation = None;
        let mut max_diag = 0.0f64;
        for i in 0..n {
            let tol = SIGN_RTOL * row_scale(e, i);
            for (j, v) in e.row(i) {
                if j == i {
                    if v > 0.0 {
                        max_diag = max_diag.max(v);
                        max_stable_h = max_stable_h.min(1.0 / v);
                    }
                } else if v > tol && explicit_violation.is_none() {
                    explicit_violation = Some(Violation { row: i, col: j, value: v });
                }
            }
        }
        let mut lmp_violation = None;
        let mut mmatrix_ok = true;
        for i in 0..n {
            let scale = row_scale(im, i);
            let tol = SIGN_RTOL * scale;
            let mut sum = 0.0;
            let mut diag = 0.0;
            let mut off_interior = 0.0;
            for (j, v) in im.row(i) {
                sum += v;
                if j == i {
                    diag = v;
                } else {
                    if v > tol && lmp_violation.is_none() {
                        lmp_violation = Some(Violation { row: i, col: j, value: v });
                    }
                    if j < n {
                        off_interior += v.abs();
                    }
                }
            }
            if sum < -tol * (im.row(i).count() as f64) && lmp_violation.is_none() {
                lmp_violation = Some(Violation { row: i, col: i, value: sum });
            }
            // strict dominance of h I + Id
            if !(1.0 + h * diag - h * off_interior > 0.0) {
                mmatrix_ok = false;
            }
        }
        if lmp_violation.is_some() {
            mmatrix_ok = false;
        }
        controls.push(ControlCertificate {
            explicit_offdiag_ok: explicit_violation.is_none(),
            explicit_violation,
            lmp_ok: lmp_violation.is_none(),
            lmp_violation,
            mmatrix_ok,
            max_diag_explicit: max_diag,
        });
    }
    Ok(MonotonicityReport {
        h,
        controls,
        max_stable_h,
    })
}
