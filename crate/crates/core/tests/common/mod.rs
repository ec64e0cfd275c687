#![allow(dead_code)]

use std::sync::Arc;

use monotone_hjb::control::{Coefficients, Control, ControlProblem, SplittingMode};
use monotone_hjb::field::{ScalarField, VectorField};
use monotone_hjb::mesh::{equilateral_mesh, interval_mesh, Mesh, Point, Rect};
use rand::Rng;

/// Random admissible data: `a ∈ [0, 0.1]`, `|b| ≤ 2` affine, `c ≥ 0` affine,
/// `d ≥ 0`, zero final data unless `bump` is set.
pub fn random_problem<R: Rng>(rng: &mut R, dim: usize, controls: usize, bump: bool) -> ControlProblem {
    let list = (0..controls)
        .map(|i| {
            let a = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..0.1) };
            let b0 = [rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)];
            let b1 = if dim == 2 { [rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)] } else { [0.0, 0.0] };
            let c = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.5)];
            let d = [rng.gen_range(0.0..2.0), rng.gen_range(0.0..1.0)];
            let affine = |p: [f64; 2]| ScalarField::function(move |x: Point| p[0] + p[1] * x[0]);
            let nonneg = |p: [f64; 2]| ScalarField::function(move |x: Point| p[0] + p[1] * x[0] * x[0]);
            Control::new(
                format!("c{i}"),
                Coefficients {
                    a: ScalarField::Constant(a),
                    b: VectorField([affine(b0), affine(b1)]),
                    c: if rng.gen_bool(0.3) { ScalarField::zero() } else { nonneg(c) },
                    d: nonneg(d),
                },
            )
        })
        .collect();
    let final_data = if bump {
        let height = rng.gen_range(0.0..1.0);
        if dim == 1 {
            ScalarField::function(move |x: Point| height * (1.0 - x[0] * x[0]).max(0.0))
        } else {
            ScalarField::function(move |x: Point| height * (0.04 - (x[0] - 0.5).powi(2) - (x[1] - 0.4).powi(2)).max(0.0))
        }
    } else {
        ScalarField::zero()
    };
    ControlProblem::new(list, final_data, 0.5).unwrap()
}

/// `(-1, 1)` in 1D or an equilateral mesh of the unit square.
pub fn random_mesh<R: Rng>(rng: &mut R, dim: usize) -> Arc<Mesh> {
    Arc::new(if dim == 1 {
        interval_mesh(-1.0, 1.0, rng.gen_range(4..40)).unwrap()
    } else {
        let n = rng.gen_range(3..9);
        equilateral_mesh(Rect::unit(), n, n).unwrap()
    })
}

pub fn random_mode<R: Rng>(rng: &mut R) -> SplittingMode {
    match rng.gen_range(0..3) {
        0 => SplittingMode::Explicit,
        1 => SplittingMode::Implicit,
        _ => SplittingMode::SemiImplicit {
            a: rng.gen_range(0.0..1.0),
            b: rng.gen_range(0.0..1.0),
            c: rng.gen_range(0.0..1.0),
        },
    }
}
