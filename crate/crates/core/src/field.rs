//! Evaluable coefficient fields and space-time reference solutions.

use std::fmt;
use std::sync::Arc;

use crate::error::{HjbError, Result};
use crate::mesh::{Mesh, Point, PointLocator};

thread_local! {
    static BUILTINS: meval::Context<'static> = meval::Context::new();
}

/// A scalar field on the closed domain.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    /// Arithmetic expression over `x` and `y`.
    Expression { source: String, expr: Arc<meval::Expr> },
    Function(Arc<dyn Fn(Point) -> f64 + Send + Sync>),
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Constant(c) => write!(f, "Constant({c})"),
            ScalarField::Expression { source, .. } => write!(f, "Expression({source:?})"),
            ScalarField::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl From<f64> for ScalarField {
    fn from(c: f64) -> Self {
        ScalarField::Constant(c)
    }
}

impl ScalarField {
    pub fn zero() -> ScalarField {
        ScalarField::Constant(0.0)
    }

    pub fn function<F: Fn(Point) -> f64 + Send + Sync + 'static>(f: F) -> ScalarField {
        ScalarField::Function(Arc::new(f))
    }

    /// Parses an expression in `x`, `y` (plus `pi`, `e`, `sin`, `cos`, `exp`,
    /// `abs`, `min`, `max`, ...). Numeric literals become constants.
    pub fn parse(source: &str) -> Result<ScalarField> {
        let trimmed = source.trim();
        if let Ok(c) = trimmed.parse::<f64>() {
            return Ok(ScalarField::Constant(c));
        }
        let expr: meval::Expr = trimmed
            .parse()
            .map_err(|e| HjbError::Parse(format!("expression '{trimmed}': {e}")))?;
        let field = ScalarField::Expression {
            source: trimmed.to_string(),
            expr: Arc::new(expr),
        };
        // surface unknown variables and functions now rather than mid-assembly
        if let ScalarField::Expression { expr, .. } = &field {
            BUILTINS
                .with(|ctx| expr.eval_with_context((("x", 0.25), (("y", 0.5), ctx))))
                .map_err(|e| HjbError::Parse(format!("expression '{trimmed}': {e}")))?;
        }
        Ok(field)
    }

    /// P1 interpolant of nodal data on `mesh`; zero outside the mesh.
    pub fn tabulated(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != mesh.node_count() {
            return Err(HjbError::DimensionMismatch {
                expected: mesh.node_count(),
                found: values.len(),
            });
        }
        let locator = PointLocator::new(&mesh);
        Ok(ScalarField::function(move |x| match locator.locate(&mesh, x) {
            Some((e, lam)) => mesh.elements()[e]
                .vertices
                .iter()
                .zip(&lam)
                .map(|(&v, l)| values[v] * l)
                .sum(),
            None => 0.0,
        }))
    }

    pub fn eval(&self, x: Point) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Expression { expr, .. } => BUILTINS
                .with(|ctx| expr.eval_with_context((("x", x[0]), (("y", x[1]), ctx))))
                .unwrap_or(f64::NAN),
            ScalarField::Function(f) => f(x),
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        matches!(self, ScalarField::Constant(c) if *c == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> ScalarField {
        match self {
            _ if factor == 0.0 => ScalarField::zero(),
            _ if factor == 1.0 => self.clone(),
            ScalarField::Constant(c) => ScalarField::Constant(c * factor),
            other => {
                let inner = other.clone();
                ScalarField::function(move |x| factor * inner.eval(x))
            }
        }
    }
}

/// A vector field; only the first `dim` components are used.
#[derive(Clone, Debug)]
pub struct VectorField(pub [ScalarField; 2]);

impl VectorField {
    pub fn zero() -> VectorField {
        VectorField([ScalarField::zero(), ScalarField::zero()])
    }

    pub fn constant(v: [f64; 2]) -> VectorField {
        VectorField([ScalarField::Constant(v[0]), ScalarField::Constant(v[1])])
    }

    pub fn eval(&self, x: Point) -> [f64; 2] {
        [self.0[0].eval(x), self.0[1].eval(x)]
    }

    pub fn is_identically_zero(&self) -> bool {
        self.0.iter().all(ScalarField::is_identically_zero)
    }

    pub fn scaled(&self, factor: f64) -> VectorField {
        VectorField([self.0[0].scaled(factor), self.0[1].scaled(factor)])
    }
}

/// A function of time and space with a spatial gradient.
pub trait SpaceTimeField: Sync {
    fn value(&self, t: f64, x: Point) -> f64;
    fn gradient(&self, t: f64, x: Point) -> [f64; 2];
}

/// Space-time field assembled from closures.
pub struct ClosureField<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V, G> SpaceTimeField for ClosureField<V, G>
where
    V: Fn(f64, Point) -> f64 + Sync,
    G: Fn(f64, Point) -> [f64; 2] + Sync,
{
    fn value(&self, t: f64, x: Point) -> f64 {
        (self.value)(t, x)
    }

    fn gradient(&self, t: f64, x: Point) -> [f64; 2] {
        (self.gradient)(t, x)
    }
}

/// The identically zero space-time field.
pub struct ZeroField;

impl SpaceTimeField for ZeroField {
    fn value(&self, _t: f64, _x: Point) -> f64 {
        0.0
    }

    fn gradient(&self, _t: f64, _x: Point) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// Smooth stationary field with its Laplacian, used by the consistency probes.
#[derive(Clone)]
pub struct SmoothField {
    pub value: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
    pub laplacian: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
}

impl SmoothField {
    /// `sin(pi x) sin(pi y)`.
    pub fn sine_product() -> SmoothField {
        use std::f64::consts::PI;
        SmoothField {
            value: Arc::new(|x: Point| (PI * x[0]).sin() * (PI * x[1]).sin()),
            laplacian: Arc::new(|x: Point| -2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin()),
        }
    }
}
