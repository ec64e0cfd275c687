//! TOML run configuration and its translation into solver inputs.
//!
//! ```toml
//! [problem]
//! name = "custom"            # eikonal1d | diffusion2d | heat2d | custom
//! horizon = 0.5
//! final_data = "0"
//!
//! [[problem.controls]]
//! label = "left"
//! a = 0.1
//! b = ["0.5", "0"]
//! c = 0
//! d = "1 + x"
//!
//! [mesh]
//! generator = "rectangle"    # interval | rectangle | file
//! pattern = "equilateral"
//! nx = 16
//! ny = 16
//!
//! [time]
//! cfl = 0.5                  # or h = 0.01
//!
//! [splitting]
//! mode = "implicit"          # explicit | implicit | semi-implicit
//!
//! [output]
//! directory = "out"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::control::{ArtificialDiffusion, Coefficients, Control, ControlProblem, OperatorSplitting, SplittingMode};
use crate::error::{HjbError, Result};
use crate::field::{ScalarField, VectorField};
use crate::mesh::{equilateral_mesh, interval_mesh, patterned_rectangle_mesh, read_mesh_file, Mesh, Pattern, Rect};
use crate::problems;
use crate::solver::SolverOptions;

/// Environment variable that overrides `output.directory`.
pub const OUTPUT_DIR_ENV: &str = "HJB_OUTPUT_DIR";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub splitting: SplittingSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A coefficient given as a number, an expression in `x`, `y`, or a file
/// with one value per mesh node.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Number(f64),
    Expression(String),
    Table { table: PathBuf },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Number(0.0)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub label: Option<String>,
    #[serde(default)]
    pub a: FieldSpec,
    #[serde(default)]
    pub b: Vec<FieldSpec>,
    #[serde(default)]
    pub c: FieldSpec,
    #[serde(default)]
    pub d: FieldSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    pub horizon: Option<f64>,
    pub final_data: Option<FieldSpec>,
    #[serde(default)]
    pub controls: Vec<ControlSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum MeshGenerator {
    Interval,
    Rectangle,
    File,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub generator: Option<MeshGenerator>,
    pub x0: Option<f64>,
    pub x1: Option<f64>,
    pub y0: Option<f64>,
    pub y1: Option<f64>,
    /// Elements per side for intervals.
    pub n: Option<usize>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub pattern: Option<Pattern>,
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub refinements: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection {
            generator: None,
            x0: None,
            x1: None,
            y0: None,
            y1: None,
            n: None,
            nx: None,
            ny: None,
            pattern: None,
            path: None,
            refinements: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    /// Overrides the problem horizon.
    pub horizon: Option<f64>,
    pub h: Option<f64>,
    /// Step as a fraction of the explicit stability limit.
    pub cfl: Option<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Explicit,
    Implicit,
    SemiImplicit,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplittingSection {
    pub mode: ModeName,
    /// Explicit fractions of `[a, b, c]` for the semi-implicit mode.
    pub fractions: Option<[f64; 3]>,
    /// `ν = diffusion_scale × mesh size` instead of the minimal budget.
    pub diffusion_scale: Option<f64>,
    pub gamma: Option<f64>,
}

impl Default for SplittingSection {
    fn default() -> Self {
        SplittingSection {
            mode: ModeName::Implicit,
            fractions: None,
            diffusion_scale: None,
            gamma: None,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "yes")]
    pub solution: bool,
    #[serde(default = "yes")]
    pub policy: bool,
    #[serde(default = "yes")]
    pub report: bool,
    /// Dump every `E^α`, `I^α` as `row col value` triplets.
    #[serde(default)]
    pub matrices: bool,
}

fn default_directory() -> PathBuf {
    PathBuf::from("output")
}

fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_directory(),
            solution: true,
            policy: true,
            report: true,
            matrices: false,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| HjbError::Parse(format!("configuration: {e}")))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<(RunConfig, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((RunConfig::parse(&text)?, base))
    }

    /// Output directory after applying [`OUTPUT_DIR_ENV`].
    pub fn output_directory(&self, base: &Path) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => base.join(&self.output.directory),
        }
    }

    pub fn build_mesh(&self, base: &Path) -> Result<Mesh> {
        let m = &self.mesh;
        let builtin_1d = self.problem.name == "eikonal1d";
        let generator = m.generator.clone().unwrap_or(if m.path.is_some() {
            MeshGenerator::File
        } else if builtin_1d {
            MeshGenerator::Interval
        } else {
            MeshGenerator::Rectangle
        });
        let mut mesh = match generator {
            MeshGenerator::Interval => {
                let (a, b) = if builtin_1d { (-1.0, 1.0) } else { (0.0, 1.0) };
                interval_mesh(m.x0.unwrap_or(a), m.x1.unwrap_or(b), m.n.or(m.nx).unwrap_or(16))?
            }
            MeshGenerator::Rectangle => {
                let rect = Rect::new(
                    m.x0.unwrap_or(0.0),
                    m.x1.unwrap_or(1.0),
                    m.y0.unwrap_or(0.0),
                    m.y1.unwrap_or(1.0),
                );
                let nx = m.nx.or(m.n).unwrap_or(16);
                let ny = m.ny.unwrap_or(nx);
                match m.pattern.unwrap_or(Pattern::Equilateral) {
                    Pattern::Equilateral => equilateral_mesh(rect, nx, ny)?,
                    p => patterned_rectangle_mesh(rect, nx, ny, p)?,
                }
            }
            MeshGenerator::File => {
                let path = m
                    .path
                    .as_ref()
                    .ok_or_else(|| HjbError::Config("mesh generator 'file' needs a path".into()))?;
                read_mesh_file(base.join(path))?
            }
        };
        for _ in 0..m.refinements {
            mesh = mesh.refine_uniform()?;
        }
        Ok(mesh)
    }

    pub fn build_problem(&self, mesh: &Arc<Mesh>, base: &Path) -> Result<ControlProblem> {
        let p = &self.problem;
        let builtin = match p.name.as_str() {
            "eikonal1d" => Some(problems::eikonal_1d()),
            "diffusion2d" => Some(problems::diffusion_2d_two_controls()),
            "heat2d" => Some(problems::heat_2d()),
            "custom" => None,
            other => {
                return Err(HjbError::Config(format!(
                    "unknown problem '{other}' (expected eikonal1d, diffusion2d, heat2d or custom)"
                )))
            }
        };
        let horizon = self.time.horizon.or(p.horizon);
        match builtin {
            Some(problem) => {
                if !p.controls.is_empty() {
                    return Err(HjbError::Config(format!("built-in problem '{}' takes no controls", p.name)));
                }
                let final_data = match &p.final_data {
                    Some(spec) => field(spec, mesh, base)?,
                    None => problem.final_data().clone(),
                };
                ControlProblem::new(
                    problem.controls().to_vec(),
                    final_data,
                    horizon.unwrap_or(problem.horizon()),
                )
            }
            None => {
                let controls = p
                    .controls
                    .iter()
                    .enumerate()
                    .map(|(i, c)| control(i, c, mesh, base))
                    .collect::<Result<Vec<_>>>()?;
                let final_data = match &p.final_data {
                    Some(spec) => field(spec, mesh, base)?,
                    None => ScalarField::zero(),
                };
                let horizon = horizon.ok_or_else(|| HjbError::Config("custom problems need a horizon".into()))?;
                ControlProblem::new(controls, final_data, horizon)
            }
        }
    }

    pub fn build_splitting(&self, problem: &ControlProblem) -> Result<OperatorSplitting> {
        let s = &self.splitting;
        let mode = match (s.mode, s.fractions) {
            (ModeName::Explicit, None) => SplittingMode::Explicit,
            (ModeName::Implicit, None) => SplittingMode::Implicit,
            (ModeName::SemiImplicit, Some([a, b, c])) => SplittingMode::SemiImplicit { a, b, c },
            (ModeName::SemiImplicit, None) => {
                return Err(HjbError::Config("semi-implicit mode needs fractions = [a, b, c]".into()))
            }
            (_, Some(_)) => return Err(HjbError::Config("fractions are only used by the semi-implicit mode".into())),
        };
        let diffusion = match s.diffusion_scale {
            Some(f) if f > 0.0 && f.is_finite() => ArtificialDiffusion::MeshScaled(f),
            Some(f) => return Err(HjbError::Config(format!("diffusion_scale must be positive, got {f}"))),
            None => ArtificialDiffusion::Minimal,
        };
        let splitting = OperatorSplitting::new(problem, mode, diffusion)?;
        Ok(match s.gamma {
            Some(g) => splitting.with_gamma(g),
            None => splitting,
        })
    }

    pub fn solver_options(&self) -> SolverOptions {
        let default = SolverOptions::default();
        SolverOptions {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter.unwrap_or(default.max_iter),
        }
    }

    /// Time step from `h`, or `cfl × max_stable_h` shrunk so that `T / h` is an integer.
    /// Returns the step and a warning if it had to be adjusted.
    pub fn time_step(&self, horizon: f64, max_stable_h: f64) -> Result<(f64, Option<String>)> {
        match (self.time.h, self.time.cfl) {
            (Some(h), None) => Ok((h, None)),
            (None, Some(cfl)) => {
                if !(cfl > 0.0) {
                    return Err(HjbError::Config(format!("cfl must be positive, got {cfl}")));
                }
                if !max_stable_h.is_finite() {
                    return Err(HjbError::Config(
                        "cfl needs a finite explicit stability limit; give h for implicit runs".into(),
                    ));
                }
                let target = cfl * max_stable_h;
                let ratio = horizon / target;
                let steps = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
                    ratio.round()
                } else {
                    ratio.ceil()
                }
                .max(1.0);
                let h = horizon / steps;
                let warning = ((h - target).abs() > 1e-12 * target)
                    .then(|| format!("time step reduced from {target} to {h} so that T/h is an integer"));
                Ok((h, warning))
            }
            (Some(_), Some(_)) => Err(HjbError::Config("give either time.h or time.cfl, not both".into())),
            (None, None) => Err(HjbError::Config("time section needs h or cfl".into())),
        }
    }
}

fn field(spec: &FieldSpec, mesh: &Arc<Mesh>, base: &Path) -> Result<ScalarField> {
    match spec {
        FieldSpec::Number(c) => Ok(ScalarField::Constant(*c)),
        FieldSpec::Expression(e) => ScalarField::parse(e),
        FieldSpec::Table { table } => {
            let path = base.join(table);
            let text = std::fs::read_to_string(&path)?;
            let values = text
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| HjbError::Parse(format!("{}: '{s}' is not a number", path.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            ScalarField::tabulated(Arc::clone(mesh), values)
        }
    }
}

fn control(index: usize, spec: &ControlSpec, mesh: &Arc<Mesh>, base: &Path) -> Result<Control> {
    if spec.b.len() > 2 {
        return Err(HjbError::Config(format!("control {index}: b has more than two components")));
    }
    let mut b = VectorField::zero();
    for (k, s) in spec.b.iter().enumerate() {
        b.0[k] = field(s, mesh, base)?;
    }
    Ok(Control::new(
        spec.label.clone().unwrap_or_else(|| format!("control{index}")),
        Coefficients {
            a: field(&spec.a, mesh, base)?,
            b,
            c: field(&spec.c, mesh, base)?,
            d: field(&spec.d, mesh, base)?,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EIKONAL: &str = r#"
        [problem]
        name = "eikonal1d"
        [mesh]
        n = 16
        [time]
        cfl = 1.0
        [splitting]
        mode = "explicit"
        diffusion_scale = 0.5
    "#;

    #[test]
    fn eikonal_config_builds() {
        let cfg = RunConfig::parse(EIKONAL).unwrap();
        let mesh = Arc::new(cfg.build_mesh(Path::new(".")).unwrap());
        assert_eq!(mesh.node_count(), 17);
        assert_eq!(mesh.node(mesh.node_count() - 1)[0].abs(), 1.0);
        let problem = cfg.build_problem(&mesh, Path::new(".")).unwrap();
        assert_eq!(problem.control_count(), 2);
        let splitting = cfg.build_splitting(&problem).unwrap();
        assert_eq!(splitting.diffusion(), ArtificialDiffusion::MeshScaled(0.5));
        assert_eq!(cfg.time_step(1.0, 0.125).unwrap(), (0.125, None));
    }

    #[test]
    fn cfl_rounds_down() {
        let cfg = RunConfig::parse(EIKONAL).unwrap();
        let (h, warning) = cfg.time_step(1.0, 0.3).unwrap();
        assert!((h - 0.25).abs() < 1e-15);
        assert!(warning.is_some());
        assert!(cfg.time_step(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn custom_controls_parse() {
        let cfg = RunConfig::parse(
            r#"
            [problem]
            name = "custom"
            horizon = 0.5
            [[problem.controls]]
            a = 0.1
            b = ["0.5", 0]
            d = "1 + x"
            [[problem.controls]]
            label = "second"
            a = "0.2"
            [mesh]
            generator = "rectangle"
            pattern = "equilateral"
            nx = 4
            [time]
            h = 0.05
            [splitting]
            mode = "semi-implicit"
            fractions = [0.0, 1.0, 0.0]
        "#,
        )
        .unwrap();
        let mesh = Arc::new(cfg.build_mesh(Path::new(".")).unwrap());
        let problem = cfg.build_problem(&mesh, Path::new(".")).unwrap();
        assert_eq!(problem.controls()[0].label, "control0");
        assert_eq!(problem.controls()[1].label, "second");
        assert!((problem.controls()[0].coefficients.d.eval([1.0, 0.0]) - 2.0).abs() < 1e-15);
        assert!(cfg.build_splitting(&problem).is_ok());
    }

    #[test]
    fn malformed_configs_are_parse_errors() {
        assert!(matches!(RunConfig::parse("[problem"), Err(HjbError::Parse(_))));
        assert!(matches!(RunConfig::parse("[problem]\nname = 3"), Err(HjbError::Parse(_))));
        assert!(matches!(
            RunConfig::parse("[problem]\nname = \"custom\"\nbogus = 1"),
            Err(HjbError::Parse(_))
        ));
    }
}
