//! Built-in problem catalog.

use crate::control::{Coefficients, Control, ControlProblem};
use crate::field::{ClosureField, ScalarField, SpaceTimeField, VectorField};
use crate::mesh::Point;

/// `-v_t + |v_x| = 1` on `(0, 1) x (-1, 1)` written as
/// `-v_t + max_{α = ±1} (α v_x - 1) = 0` with zero boundary and final data.
/// Control 0 is `α = +1`, control 1 is `α = -1`.
pub fn eikonal_1d() -> ControlProblem {
    let control = |label: &str, alpha: f64| {
        Control::new(
            label,
            Coefficients {
                a: ScalarField::zero(),
                b: VectorField::constant([alpha, 0.0]),
                c: ScalarField::zero(),
                d: ScalarField::Constant(1.0),
            },
        )
    };
    ControlProblem::new(vec![control("+1", 1.0), control("-1", -1.0)], ScalarField::zero(), 1.0)
        .expect("static problem data is valid")
}

/// Viscosity solution `min(1 - t, 1 - |x|)` of [`eikonal_1d`].
pub fn eikonal_exact() -> impl SpaceTimeField {
    ClosureField {
        value: |t: f64, x: Point| (1.0 - t).min(1.0 - x[0].abs()),
        gradient: |t: f64, x: Point| {
            if x[0].abs() < t {
                [0.0, 0.0]
            } else {
                [-x[0].signum(), 0.0]
            }
        },
    }
}

/// Two diffusion-dominated controls in 2D with different drifts and costs.
pub fn diffusion_2d_two_controls() -> ControlProblem {
    let c1 = Control::new(
        "slow",
        Coefficients {
            a: ScalarField::Constant(0.05),
            b: VectorField::constant([0.5, 0.0]),
            c: ScalarField::zero(),
            d: ScalarField::parse("1 + x").expect("valid expression"),
        },
    );
    let c2 = Control::new(
        "fast",
        Coefficients {
            a: ScalarField::Constant(0.1),
            b: VectorField::constant([0.0, -0.5]),
            c: ScalarField::Constant(0.5),
            d: ScalarField::parse("2 - x").expect("valid expression"),
        },
    );
    ControlProblem::new(vec![c1, c2], ScalarField::zero(), 0.5).expect("static problem data is valid")
}

/// Single-control heat problem `-v_t - Δv = 1` with zero final data.
pub fn heat_2d() -> ControlProblem {
    let c = Control::new(
        "heat",
        Coefficients {
            a: ScalarField::Constant(1.0),
            b: VectorField::zero(),
            c: ScalarField::zero(),
            d: ScalarField::Constant(1.0),
        },
    );
    ControlProblem::new(vec![c], ScalarField::zero(), 0.25).expect("static problem data is valid")
}
