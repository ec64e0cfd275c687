//! Plain-text mesh format.
//!
//! ```text
//! dim n_nodes n_elements
//! x [y] boundary_flag        (one line per node)
//! i j [k]                    (one line per element, 1-based node indices)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Writers emit
//! interior-first ordering; readers accept any ordering and reorder.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Mesh, Point};
use crate::error::{HjbError, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> HjbError {
    HjbError::Parse(format!("mesh line {line}: {}", msg.into()))
}

pub fn read_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hl, header) = lines.next().ok_or_else(|| HjbError::Parse("empty mesh file".into()))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| parse_err(hl, e.to_string())))
        .collect::<Result<_>>()?;
    let [dim, n_nodes, n_elements] = head[..] else {
        return Err(parse_err(hl, "header must be 'dim n_nodes n_elements'"));
    };
    if dim != 1 && dim != 2 {
        return Err(parse_err(hl, format!("unsupported dimension {dim}")));
    }

    let mut nodes: Vec<Point> = Vec::with_capacity(n_nodes);
    let mut flags = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, line) = lines.next().ok_or_else(|| HjbError::Parse("truncated node list".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != dim + 1 {
            return Err(parse_err(ln, format!("expected {} fields", dim + 1)));
        }
        let mut p = [0.0; 2];
        for (k, t) in tokens[..dim].iter().enumerate() {
            p[k] = t.parse::<f64>().map_err(|e| parse_err(ln, e.to_string()))?;
        }
        let flag = match tokens[dim] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(ln, format!("boundary flag must be 0 or 1, got '{other}'"))),
        };
        nodes.push(p);
        flags.push(flag);
    }

    let mut cells = Vec::with_capacity(n_elements);
    for _ in 0..n_elements {
        let (ln, line) =
            lines.next().ok_or_else(|| HjbError::Parse("truncated element list".into()))?;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| parse_err(ln, e.to_string())))
            .collect::<Result<_>>()?;
        if idx.len() != dim + 1 || idx.iter().any(|&i| i == 0 || i > n_nodes) {
            return Err(parse_err(ln, "bad element connectivity"));
        }
        cells.push(idx.into_iter().map(|i| i - 1).collect());
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "trailing content"));
    }

    let (mesh, map) = Mesh::from_simplices_with_map(dim, nodes, cells)?;
    for (old, &flag) in flags.iter().enumerate() {
        if flag == mesh.is_interior(map[old]) {
            return Err(HjbError::Parse(format!(
                "node {} boundary flag {} disagrees with mesh topology",
                old + 1,
                flag as u8
            )));
        }
    }
    Ok(mesh)
}

pub fn read_mesh_file(path: impl AsRef<Path>) -> Result<Mesh> {
    read_mesh(&fs::read_to_string(path)?)
}

pub fn write_mesh<W: Write>(mesh: &Mesh, mut out: W) -> Result<()> {
    let dim = mesh.dim();
    writeln!(out, "{} {} {}", dim, mesh.node_count(), mesh.elements().len())?;
    for (i, p) in mesh.nodes().iter().enumerate() {
        let flag = u8::from(!mesh.is_interior(i));
        if dim == 1 {
            writeln!(out, "{} {}", p[0], flag)?;
        } else {
            writeln!(out, "{} {} {}", p[0], p[1], flag)?;
        }
    }
    for el in mesh.elements() {
        let idx: Vec<String> = el.vertices.iter().map(|v| (v + 1).to_string()).collect();
        writeln!(out, "{}", idx.join(" "))?;
    }
    Ok(())
}

pub fn write_mesh_file(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_mesh(mesh, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{equilateral_mesh, Rect};

    #[test]
    fn reorders_boundary_first_input() {
        let text = "1 4 3\n0 1\n1 1\n0.25 0\n0.5 0\n1 3\n3 4\n4 2\n";
        let mesh = read_mesh(text).unwrap();
        assert_eq!(mesh.interior_count(), 2);
        assert_eq!(mesh.node(0)[0], 0.25);
        assert_eq!(mesh.node(1)[0], 0.5);
    }

    #[test]
    fn rejects_wrong_flags() {
        let text = "1 3 2\n0 1\n0.5 1\n1 1\n1 2\n2 3\n";
        assert!(matches!(read_mesh(text), Err(HjbError::Parse(_))));
    }

    #[test]
    fn rejects_bad_indices() {
        let text = "1 3 2\n0 1\n0.5 0\n1 1\n1 2\n2 4\n";
        assert!(matches!(read_mesh(text), Err(HjbError::Parse(_))));
    }

    #[test]
    fn round_trip_keeps_topology() {
        let mesh = equilateral_mesh(Rect::unit(), 4, 4).unwrap();
        let mut buf = Vec::new();
        write_mesh(&mesh, &mut buf).unwrap();
        let back = read_mesh(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.nodes(), mesh.nodes());
        assert_eq!(back.interior_count(), mesh.interior_count());
        for (a, b) in back.elements().iter().zip(mesh.elements()) {
            assert_eq!(a.vertices, b.vertices);
        }
    }
}
