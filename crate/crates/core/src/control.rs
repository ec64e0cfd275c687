//! HJB data, the explicit/implicit operator splitting and the artificial
//! diffusion budget that makes the assembled operators monotone.

use rayon::prelude::*;

use crate::error::{HjbError, Result};
use crate::field::{ScalarField, VectorField};
use crate::mesh::{norm, AcutenessCertificate, Mesh, Point};

/// Coefficients of `L w = -a Δw + b·∇w + c w` and the running cost `d`.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub a: ScalarField,
    pub b: VectorField,
    pub c: ScalarField,
    pub d: ScalarField,
}

#[derive(Clone, Debug)]
pub struct Control {
    pub label: String,
    pub coefficients: Coefficients,
}

impl Control {
    pub fn new(label: impl Into<String>, coefficients: Coefficients) -> Control {
        Control {
            label: label.into(),
            coefficients,
        }
    }
}

/// `-∂t v + max_α (L^α v - d^α) = 0`, `v = 0` on the lateral boundary,
/// `v(T) = v_T`, over a finite control list.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    controls: Vec<Control>,
    final_data: ScalarField,
    horizon: f64,
}

const SIGN_TOL: f64 = 1e-12;

/// Sampling points of an element: its vertices and centroid.
pub(crate) fn element_samples(mesh: &Mesh, e: usize) -> Vec<Point> {
    let mut pts: Vec<Point> = mesh.elements()[e].vertices.iter().map(|&v| mesh.node(v)).collect();
    pts.push(mesh.centroid(e));
    pts
}

impl ControlProblem {
    pub fn new(controls: Vec<Control>, final_data: ScalarField, horizon: f64) -> Result<ControlProblem> {
        if controls.is_empty() {
            return Err(HjbError::Config("control list is empty".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(HjbError::Config(format!("horizon must be positive, got {horizon}")));
        }
        Ok(ControlProblem {
            controls,
            final_data,
            horizon,
        })
    }

    pub fn controls(&self) -> &[Control] {
        &self.controls
    }

    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    pub fn final_data(&self) -> &ScalarField {
        &self.final_data
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Problem restricted to one control.
    pub fn single_control(&self, index: usize) -> Result<ControlProblem> {
        let control = self
            .controls
            .get(index)
            .ok_or_else(|| HjbError::Config(format!("no control with index {index}")))?;
        ControlProblem::new(vec![control.clone()], self.final_data.clone(), self.horizon)
    }

    /// Checks sign conditions by sampling at nodes and element centroids.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let mut samples: Vec<Point> = mesh.nodes().to_vec();
        samples.extend((0..mesh.elements().len()).map(|e| mesh.centroid(e)));
        for control in &self.controls {
            let co = &control.coefficients;
            for &x in &samples {
                for (name, value) in [("a", co.a.eval(x)), ("c", co.c.eval(x)), ("d", co.d.eval(x))] {
                    if !(value >= -SIGN_TOL) {
                        return Err(HjbError::Config(format!(
                            "control '{}': {name}({:?}) = {value} must be non-negative",
                            control.label, x
                        )));
                    }
                }
                let b = co.b.eval(x);
                if !b[0].is_finite() || !b[1].is_finite() {
                    return Err(HjbError::Config(format!(
                        "control '{}': b is not finite at {x:?}",
                        control.label
                    )));
                }
            }
        }
        for &x in &samples {
            let v = self.final_data.eval(x);
            if !(v >= -SIGN_TOL) {
                return Err(HjbError::Config(format!("final data negative at {x:?}: {v}")));
            }
        }
        for node in mesh.interior_count()..mesh.node_count() {
            let v = self.final_data.eval(mesh.node(node));
            if v.abs() > SIGN_TOL {
                return Err(HjbError::Config(format!(
                    "final data must vanish on the boundary, got {v} at {:?}",
                    mesh.node(node)
                )));
            }
        }
        Ok(())
    }
}

/// How the operator `L^α` is divided between the explicit and implicit parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplittingMode {
    Explicit,
    Implicit,
    /// Fractions of `a`, `b`, `c` treated explicitly; the rest is implicit.
    SemiImplicit { a: f64, b: f64, c: f64 },
}

impl SplittingMode {
    fn fractions(&self) -> [f64; 3] {
        match *self {
            SplittingMode::Explicit => [1.0; 3],
            SplittingMode::Implicit => [0.0; 3],
            SplittingMode::SemiImplicit { a, b, c } => [a, b, c],
        }
    }
}

/// Choice of artificial diffusion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArtificialDiffusion {
    /// Smallest nodal diffusion satisfying the per-element acuteness bound.
    Minimal,
    /// `factor * mesh_size` on every node whose part carries lower-order terms.
    MeshScaled(f64),
}

/// One side (explicit or implicit) of the splitting for a single control.
#[derive(Clone, Debug)]
pub struct PartFields {
    /// Diffusion seed before augmentation.
    pub a: ScalarField,
    pub b: VectorField,
    pub c: ScalarField,
}

impl PartFields {
    fn zero() -> PartFields {
        PartFields {
            a: ScalarField::zero(),
            b: VectorField::zero(),
            c: ScalarField::zero(),
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        self.a.is_identically_zero() && self.b.is_identically_zero() && self.c.is_identically_zero()
    }

    fn has_lower_order(&self) -> bool {
        !(self.b.is_identically_zero() && self.c.is_identically_zero())
    }
}

#[derive(Clone, Debug)]
pub struct OperatorSplitting {
    mode: SplittingMode,
    explicit: Vec<PartFields>,
    implicit: Vec<PartFields>,
    source: Vec<ScalarField>,
    diffusion: ArtificialDiffusion,
    gamma: Option<f64>,
}

impl OperatorSplitting {
    pub fn new(problem: &ControlProblem, mode: SplittingMode, diffusion: ArtificialDiffusion) -> Result<OperatorSplitting> {
        let fr = mode.fractions();
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(HjbError::Config(format!("splitting fractions must lie in [0, 1], got {fr:?}")));
        }
        if let ArtificialDiffusion::MeshScaled(f) = diffusion {
            if !(f >= 0.0) || !f.is_finite() {
                return Err(HjbError::Config(format!("artificial diffusion factor must be >= 0, got {f}")));
            }
        }
        let mut explicit = Vec::new();
        let mut implicit = Vec::new();
        for control in problem.controls() {
            let co = &control.coefficients;
            let part = |frac: [f64; 3]| {
                let p = PartFields {
                    a: co.a.scaled(frac[0]),
                    b: co.b.scaled(frac[1]),
                    c: co.c.scaled(frac[2]),
                };
                if p.is_identically_zero() {
                    PartFields::zero()
                } else {
                    p
                }
            };
            explicit.push(part(fr));
            implicit.push(part([1.0 - fr[0], 1.0 - fr[1], 1.0 - fr[2]]));
        }
        Ok(OperatorSplitting {
            mode,
            explicit,
            implicit,
            source: problem.controls().iter().map(|c| c.coefficients.d.clone()).collect(),
            diffusion,
            gamma: None,
        })
    }

    /// Uses a fixed reaction bound instead of the sampled one.
    pub fn with_gamma(mut self, gamma: f64) -> OperatorSplitting {
        self.gamma = Some(gamma);
        self
    }

    pub fn mode(&self) -> SplittingMode {
        self.mode
    }

    pub fn diffusion(&self) -> ArtificialDiffusion {
        self.diffusion
    }

    pub fn control_count(&self) -> usize {
        self.explicit.len()
    }

    pub fn explicit(&self, control: usize) -> &PartFields {
        &self.explicit[control]
    }

    pub fn implicit(&self, control: usize) -> &PartFields {
        &self.implicit[control]
    }

    pub fn source(&self, control: usize) -> &ScalarField {
        &self.source[control]
    }

    pub fn gamma_override(&self) -> Option<f64> {
        self.gamma
    }
}

/// Sup-norms of the lower-order fields of one part on one element.
#[derive(Clone, Copy, Debug, Default)]
struct ElementBounds {
    b: f64,
    c: f64,
}

fn element_bounds(mesh: &Mesh, part: &PartFields) -> Vec<ElementBounds> {
    (0..mesh.elements().len())
        .map(|e| {
            let mut bmax = [0.0f64; 2];
            let mut cmax = 0.0f64;
            for x in element_samples(mesh, e) {
                let b = part.b.eval(x);
                bmax[0] = bmax[0].max(b[0].abs());
                if mesh.dim() == 2 {
                    bmax[1] = bmax[1].max(b[1].abs());
                }
                cmax = cmax.max(part.c.eval(x).abs());
            }
            ElementBounds {
                b: norm(bmax),
                c: cmax,
            }
        })
        .collect()
}

/// Nodal artificial diffusion per control and interior node.
#[derive(Clone, Debug)]
pub struct DiffusionBudget {
    node_count: usize,
    interior_count: usize,
    sin_theta: f64,
    /// Smallest ν meeting the per-element bound (explicit part), `[control][node]`.
    pub minimal_explicit: Vec<Vec<f64>>,
    pub minimal_implicit: Vec<Vec<f64>>,
    /// ν actually applied.
    pub nu_explicit: Vec<Vec<f64>>,
    pub nu_implicit: Vec<Vec<f64>>,
    /// Augmented nodal diffusions `max(seed, ν)`.
    pub diffusion_explicit: Vec<Vec<f64>>,
    pub diffusion_implicit: Vec<Vec<f64>>,
    /// Reaction bound over all controls.
    pub gamma: f64,
}

impl DiffusionBudget {
    pub fn sin_theta(&self) -> f64 {
        self.sin_theta
    }

    pub fn matches(&self, mesh: &Mesh) -> bool {
        self.node_count == mesh.node_count() && self.interior_count == mesh.interior_count()
    }

    /// Left and right sides of the acuteness bound for `node`, `control` on
    /// each patch element: `(|b|_T + diam_T |c|_T, sin θ |∇φ̂|_T vol T)`.
    pub fn bound_terms(
        mesh: &Mesh,
        part: &PartFields,
        sin_theta: f64,
        node: usize,
    ) -> Vec<(f64, f64)> {
        let l1 = mesh.hat_l1_norm(node);
        mesh.patch(node)
            .iter()
            .map(|&e| {
                let el = &mesh.elements()[e];
                let mut bmax = [0.0f64; 2];
                let mut cmax = 0.0f64;
                for x in element_samples(mesh, e) {
                    let b = part.b.eval(x);
                    bmax[0] = bmax[0].max(b[0].abs());
                    if mesh.dim() == 2 {
                        bmax[1] = bmax[1].max(b[1].abs());
                    }
                    cmax = cmax.max(part.c.eval(x).abs());
                }
                let g = norm(el.gradient_of(node).expect("patch element contains node")) / l1;
                (norm(bmax) + el.diameter * cmax, sin_theta * g * el.volume)
            })
            .collect()
    }
}

fn minimal_nu(mesh: &Mesh, bounds: &[ElementBounds], sin_theta: f64) -> Vec<f64> {
    (0..mesh.interior_count())
        .map(|node| {
            let l1 = mesh.hat_l1_norm(node);
            mesh.patch(node)
                .iter()
                .map(|&e| {
                    let el = &mesh.elements()[e];
                    let lhs = bounds[e].b + el.diameter * bounds[e].c;
                    if lhs == 0.0 {
                        return 0.0;
                    }
                    let g = norm(el.gradient_of(node).expect("patch element contains node")) / l1;
                    lhs / (sin_theta * g * el.volume)
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Computes the nodal artificial diffusion for every control and interior node.
pub fn compute_diffusion_budget(
    mesh: &Mesh,
    splitting: &OperatorSplitting,
    certificate: &AcutenessCertificate,
) -> Result<DiffusionBudget> {
    if !certificate.strictly_acute {
        let (element, node_a, node_b) = certificate.worst_pair.unwrap_or((0, 0, 0));
        return Err(HjbError::NotAcute {
            sin_theta: certificate.sin_theta,
            element,
            node_a,
            node_b,
        });
    }
    let sin_theta = certificate.sin_theta;
    let h = mesh.mesh_size();
    let n_int = mesh.interior_count();

    struct PerControl {
        minimal: [Vec<f64>; 2],
        nu: [Vec<f64>; 2],
        diffusion: [Vec<f64>; 2],
        c_sup: f64,
    }

    let per_control: Vec<PerControl> = (0..splitting.control_count())
        .into_par_iter()
        .map(|alpha| {
            let parts = [splitting.explicit(alpha), splitting.implicit(alpha)];
            let mut minimal: [Vec<f64>; 2] = Default::default();
            let mut nu: [Vec<f64>; 2] = Default::default();
            let mut diffusion: [Vec<f64>; 2] = Default::default();
            let mut c_sup = 0.0;
            for (k, part) in parts.iter().enumerate() {
                let (min_k, bounds) = if part.has_lower_order() {
                    let bounds = element_bounds(mesh, part);
                    (minimal_nu(mesh, &bounds, sin_theta), bounds)
                } else {
                    (vec![0.0; n_int], vec![ElementBounds::default(); mesh.elements().len()])
                };
                c_sup += bounds.iter().map(|b| b.c).fold(0.0, f64::max);
                let applied: Vec<f64> = match splitting.diffusion() {
                    ArtificialDiffusion::Minimal => min_k.clone(),
                    ArtificialDiffusion::MeshScaled(f) => min_k
                        .iter()
                        .map(|&m| if m > 0.0 { f * h } else { 0.0 })
                        .collect(),
                };
                diffusion[k] = (0..n_int)
                    .map(|node| part.a.eval(mesh.node(node)).max(applied[node]))
                    .collect();
                minimal[k] = min_k;
                nu[k] = applied;
            }
            PerControl {
                minimal,
                nu,
                diffusion,
                c_sup,
            }
        })
        .collect();

    let sampled_gamma = per_control.iter().map(|p| p.c_sup).fold(0.0, f64::max);
    let gamma = match splitting.gamma_override() {
        Some(g) if g + 1e-12 < sampled_gamma => {
            return Err(HjbError::Config(format!(
                "reaction bound gamma = {g} is below the sampled sup {sampled_gamma}"
            )))
        }
        Some(g) => g,
        None => sampled_gamma,
    };

    let mut budget = DiffusionBudget {
        node_count: mesh.node_count(),
        interior_count: n_int,
        sin_theta,
        minimal_explicit: Vec::new(),
        minimal_implicit: Vec::new(),
        nu_explicit: Vec::new(),
        nu_implicit: Vec::new(),
        diffusion_explicit: Vec::new(),
        diffusion_implicit: Vec::new(),
        gamma,
    };
    for p in per_control {
        let [me, mi] = p.minimal;
        let [ne, ni] = p.nu;
        let [de, di] = p.diffusion;
        budget.minimal_explicit.push(me);
        budget.minimal_implicit.push(mi);
        budget.nu_explicit.push(ne);
        budget.nu_implicit.push(ni);
        budget.diffusion_explicit.push(de);
        budget.diffusion_implicit.push(di);
    }
    Ok(budget)
}

/// Sup over controls and interior nodes of the deviation between the data
/// `(a, b, c, d)` and what the discrete operators actually use.
pub fn splitting_consistency_residual(
    mesh: &Mesh,
    problem: &ControlProblem,
    splitting: &OperatorSplitting,
    budget: &DiffusionBudget,
) -> Result<f64> {
    if !budget.matches(mesh) {
        return Err(HjbError::Config("diffusion budget was computed on a different mesh".into()));
    }
    let mut all_samples: Vec<Point> = mesh.nodes().to_vec();
    all_samples.extend((0..mesh.elements().len()).map(|e| mesh.centroid(e)));

    let mut worst = 0.0f64;
    for (alpha, control) in problem.controls().iter().enumerate() {
        let co = &control.coefficients;
        let (ex, im) = (splitting.explicit(alpha), splitting.implicit(alpha));
        let mut global = 0.0f64;
        let mut b_dev = 0.0f64;
        let mut c_dev = 0.0f64;
        let mut d_dev = 0.0f64;
        for &x in &all_samples {
            let (b, b1, b2) = (co.b.eval(x), ex.b.eval(x), im.b.eval(x));
            b_dev = b_dev.max((b[0] - b1[0] - b2[0]).abs());
            if mesh.dim() == 2 {
                b_dev = b_dev.max((b[1] - b1[1] - b2[1]).abs());
            }
            c_dev = c_dev.max((co.c.eval(x) - ex.c.eval(x) - im.c.eval(x)).abs());
            d_dev = d_dev.max((co.d.eval(x) - splitting.source(alpha).eval(x)).abs());
        }
        global += b_dev + c_dev + d_dev;
        for node in 0..mesh.interior_count() {
            let nodal = budget.diffusion_explicit[alpha][node] + budget.diffusion_implicit[alpha][node];
            let a_dev = mesh
                .patch(node)
                .iter()
                .flat_map(|&e| element_samples(mesh, e))
                .map(|x| (co.a.eval(x) - nodal).abs())
                .fold(0.0, f64::max);
            worst = worst.max(a_dev + global);
        }
    }
    Ok(worst)
}
