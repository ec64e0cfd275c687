use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Mesh, Point};
use crate::error::{HjbError, Result};

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Rect {
        Rect { x0, x1, y0, y1 }
    }

    pub fn unit() -> Rect {
        Rect::new(0.0, 1.0, 0.0, 1.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.x0 < self.x1 && self.y0 < self.y1) {
            return Err(HjbError::Config(format!("invalid rectangle {self:?}")));
        }
        Ok(())
    }
}

/// Triangulation patterns for structured rectangle meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Every square cut along the same diagonal; the P1 Laplacian is the 5-point stencil.
    Consistent,
    /// Alternating diagonals; every other node has exactly four axis neighbours.
    Inconsistent,
    /// Offset rows of congruent equilateral triangles.
    Equilateral,
}

impl FromStr for Pattern {
    type Err = HjbError;

    fn from_str(s: &str) -> Result<Pattern> {
        match s.trim().to_ascii_lowercase().as_str() {
            "consistent" => Ok(Pattern::Consistent),
            "inconsistent" => Ok(Pattern::Inconsistent),
            "equilateral" => Ok(Pattern::Equilateral),
            other => Err(HjbError::Config(format!("unsupported mesh pattern '{other}'"))),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Pattern::Consistent => "consistent",
            Pattern::Inconsistent => "inconsistent",
            Pattern::Equilateral => "equilateral",
        };
        f.write_str(name)
    }
}

/// Uniform mesh of `[a, b]` with `n_elements` intervals.
pub fn interval_mesh(a: f64, b: f64, n_elements: usize) -> Result<Mesh> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(HjbError::Config(format!("invalid interval [{a}, {b}]")));
    }
    if n_elements < 2 {
        return Err(HjbError::Config(format!(
            "interval mesh needs at least 2 elements, got {n_elements}"
        )));
    }
    let dx = (b - a) / n_elements as f64;
    let mut nodes: Vec<Point> = (0..=n_elements).map(|i| [a + i as f64 * dx, 0.0]).collect();
    nodes[n_elements][0] = b;
    let cells = (0..n_elements).map(|i| vec![i, i + 1]).collect();
    Mesh::from_simplices(1, nodes, cells)
}

/// Structured triangulation of `rect` with `nx` by `ny` cells.
///
/// For [`Pattern::Equilateral`], `nx` is the number of triangle bases per row
/// (side `s = width / nx`) and `ny` the number of triangle rows; rows that
/// do not fit inside the rectangle are dropped.
pub fn patterned_rectangle_mesh(rect: Rect, nx: usize, ny: usize, pattern: Pattern) -> Result<Mesh> {
    rect.validate()?;
    if nx < 2 || ny < 2 {
        return Err(HjbError::Config(format!("need nx, ny >= 2, got {nx} x {ny}")));
    }
    if pattern == Pattern::Equilateral {
        return equilateral_mesh(rect, nx, ny);
    }
    let hx = (rect.x1 - rect.x0) / nx as f64;
    let hy = (rect.y1 - rect.y0) / ny as f64;
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx { rect.x1 } else { rect.x0 + i as f64 * hx };
            let y = if j == ny { rect.y1 } else { rect.y0 + j as f64 * hy };
            nodes.push([x, y]);
        }
    }
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (ll, lr, ul, ur) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            let anti_diagonal = pattern == Pattern::Inconsistent && (i + j) % 2 == 0;
            if anti_diagonal {
                cells.push(vec![ll, lr, ul]);
                cells.push(vec![lr, ur, ul]);
            } else {
                cells.push(vec![ll, lr, ur]);
                cells.push(vec![ll, ur, ul]);
            }
        }
    }
    Mesh::from_simplices(2, nodes, cells)
}

/// Offset-row mesh of congruent equilateral triangles inside `rect`.
pub fn equilateral_mesh(rect: Rect, nx: usize, ny: usize) -> Result<Mesh> {
    rect.validate()?;
    if nx < 2 || ny < 2 {
        return Err(HjbError::Config(format!("need nx, ny >= 2, got {nx} x {ny}")));
    }
    let s = (rect.x1 - rect.x0) / nx as f64;
    let row_height = s * 3f64.sqrt() / 2.0;
    let fit = ((rect.y1 - rect.y0) / row_height * (1.0 + 1e-12)).floor() as usize;
    let rows = ny.min(fit);
    if rows < 2 {
        return Err(HjbError::Config(format!(
            "rectangle too short for two equilateral rows of side {s}"
        )));
    }

    let mut nodes = Vec::new();
    let mut row_start = Vec::with_capacity(rows + 1);
    for j in 0..=rows {
        row_start.push(nodes.len());
        let y = rect.y0 + j as f64 * row_height;
        if j % 2 == 0 {
            for i in 0..=nx {
                nodes.push([rect.x0 + i as f64 * s, y]);
            }
        } else {
            for i in 0..nx {
                nodes.push([rect.x0 + (i as f64 + 0.5) * s, y]);
            }
        }
    }

    let mut cells = Vec::new();
    for j in 0..rows {
        let (lo, hi) = (row_start[j], row_start[j + 1]);
        if j % 2 == 0 {
            // long row below, short row above
            for i in 0..nx {
                cells.push(vec![lo + i, lo + i + 1, hi + i]);
            }
            for i in 0..nx - 1 {
                cells.push(vec![hi + i, lo + i + 1, hi + i + 1]);
            }
        } else {
            for i in 0..nx {
                cells.push(vec![lo + i, hi + i + 1, hi + i]);
            }
            for i in 0..nx - 1 {
                cells.push(vec![lo + i, lo + i + 1, hi + i + 1]);
            }
        }
    }
    Mesh::from_simplices(2, nodes, cells)
}
