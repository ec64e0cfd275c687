//! Simplicial meshes in one and two space dimensions.
//!
//! Nodes are stored interior-first: indices `0..interior_count()` are the
//! nodes strictly inside the domain and the remaining indices lie on the
//! boundary. Boundary detection is combinatorial: a node is on the boundary
//! iff it belongs to a facet that is shared by exactly one element.

mod generate;
mod io;
mod locate;

use std::collections::HashMap;

pub use generate::{equilateral_mesh, interval_mesh, patterned_rectangle_mesh, Pattern, Rect};
pub use io::{read_mesh, read_mesh_file, write_mesh, write_mesh_file};
pub use locate::PointLocator;

use crate::error::{HjbError, Result};

/// A point in the plane. One-dimensional meshes keep the second coordinate at zero.
pub type Point = [f64; 2];

/// A simplex with its constant hat-function gradients.
#[derive(Debug, Clone)]
pub struct Element {
    pub vertices: Vec<usize>,
    pub volume: f64,
    pub diameter: f64,
    /// `gradients[k]` is the gradient of the hat function of `vertices[k]` on this element.
    pub gradients: Vec<[f64; 2]>,
}

impl Element {
    pub fn local_index(&self, node: usize) -> Option<usize> {
        self.vertices.iter().position(|&v| v == node)
    }

    pub fn gradient_of(&self, node: usize) -> Option<[f64; 2]> {
        self.local_index(node).map(|k| self.gradients[k])
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    nodes: Vec<Point>,
    elements: Vec<Element>,
    interior_count: usize,
    patches: Vec<Vec<usize>>,
}

/// Strict-acuteness audit of a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcutenessCertificate {
    /// Minimum over elements and distinct vertex pairs of
    /// `-(grad phi_a . grad phi_b) / (|grad phi_a| |grad phi_b|)`.
    pub sin_theta: f64,
    pub strictly_acute: bool,
    /// `(element, node_a, node_b)` attaining the minimum.
    pub worst_pair: Option<(usize, usize, usize)>,
}

const ACUTE_SNAP: f64 = 1e-12;

pub(crate) fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn norm(a: [f64; 2]) -> f64 {
    dot(a, a).sqrt()
}

fn distance(a: Point, b: Point) -> f64 {
    norm([a[0] - b[0], a[1] - b[1]])
}

fn element_geometry(dim: usize, pts: &[Point]) -> Result<(f64, f64, Vec<[f64; 2]>)> {
    match dim {
        1 => {
            let len = pts[1][0] - pts[0][0];
            let volume = len.abs();
            if volume <= 0.0 || !volume.is_finite() {
                return Err(HjbError::Mesh("degenerate interval element".into()));
            }
            Ok((volume, volume, vec![[-1.0 / len, 0.0], [1.0 / len, 0.0]]))
        }
        2 => {
            let (p0, p1, p2) = (pts[0], pts[1], pts[2]);
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            let diameter = distance(p0, p1).max(distance(p1, p2)).max(distance(p0, p2));
            let volume = 0.5 * det.abs();
            if !(volume > 1e-14 * diameter * diameter) {
                return Err(HjbError::Mesh("degenerate triangle".into()));
            }
            let gradients = vec![
                [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
                [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
                [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
            ];
            Ok((volume, diameter, gradients))
        }
        _ => Err(HjbError::Mesh(format!("unsupported dimension {dim}"))),
    }
}

/// Nodes lying on a facet that belongs to exactly one element.
fn combinatorial_boundary(dim: usize, n_nodes: usize, cells: &[Vec<usize>]) -> Vec<bool> {
    let mut facet_count: HashMap<Vec<usize>, usize> = HashMap::new();
    for cell in cells {
        for skip in 0..cell.len() {
            let mut facet: Vec<usize> = cell
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != skip)
                .map(|(_, &v)| v)
                .collect();
            facet.sort_unstable();
            *facet_count.entry(facet).or_insert(0) += 1;
        }
    }
    let mut on_boundary = vec![false; n_nodes];
    for (facet, count) in facet_count {
        if count == 1 {
            for v in facet {
                on_boundary[v] = true;
            }
        }
    }
    debug_assert!(dim == 1 || dim == 2);
    on_boundary
}

impl Mesh {
    /// Builds a mesh from raw simplices. Nodes are reordered interior-first
    /// (stable within each class); the returned permutation maps input node
    /// index to mesh node index.
    pub fn from_simplices_with_map(
        dim: usize,
        nodes: Vec<Point>,
        cells: Vec<Vec<usize>>,
    ) -> Result<(Mesh, Vec<usize>)> {
        if dim != 1 && dim != 2 {
            return Err(HjbError::Mesh(format!("unsupported dimension {dim}")));
        }
        if cells.is_empty() {
            return Err(HjbError::Mesh("mesh has no elements".into()));
        }
        let n = nodes.len();
        let mut used = vec![false; n];
        for cell in &cells {
            if cell.len() != dim + 1 {
                return Err(HjbError::Mesh(format!(
                    "element has {} vertices, expected {}",
                    cell.len(),
                    dim + 1
                )));
            }
            for &v in cell {
                if v >= n {
                    return Err(HjbError::Mesh(format!("node index {v} out of range")));
                }
                used[v] = true;
            }
            let mut sorted = cell.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != cell.len() {
                return Err(HjbError::Mesh("element repeats a vertex".into()));
            }
        }
        if let Some(orphan) = used.iter().position(|u| !u) {
            return Err(HjbError::Mesh(format!("node {orphan} belongs to no element")));
        }

        let boundary = combinatorial_boundary(dim, n, &cells);
        let mut map = vec![0usize; n];
        let mut next = 0;
        for (i, &b) in boundary.iter().enumerate() {
            if !b {
                map[i] = next;
                next += 1;
            }
        }
        let interior_count = next;
        for (i, &b) in boundary.iter().enumerate() {
            if b {
                map[i] = next;
                next += 1;
            }
        }
        let mut new_nodes = vec![[0.0; 2]; n];
        for (i, p) in nodes.into_iter().enumerate() {
            new_nodes[map[i]] = if dim == 1 { [p[0], 0.0] } else { p };
        }

        let mut elements = Vec::with_capacity(cells.len());
        let mut patches = vec![Vec::new(); n];
        for (e, cell) in cells.into_iter().enumerate() {
            let vertices: Vec<usize> = cell.iter().map(|&v| map[v]).collect();
            let pts: Vec<Point> = vertices.iter().map(|&v| new_nodes[v]).collect();
            let (volume, diameter, gradients) = element_geometry(dim, &pts)
                .map_err(|err| HjbError::Mesh(format!("element {e}: {err}")))?;
            for &v in &vertices {
                patches[v].push(e);
            }
            elements.push(Element {
                vertices,
                volume,
                diameter,
                gradients,
            });
        }

        Ok((
            Mesh {
                dim,
                nodes: new_nodes,
                elements,
                interior_count,
                patches,
            },
            map,
        ))
    }

    pub fn from_simplices(dim: usize, nodes: Vec<Point>, cells: Vec<Vec<usize>>) -> Result<Mesh> {
        Self::from_simplices_with_map(dim, nodes, cells).map(|(m, _)| m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// Number of interior nodes `N`.
    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    pub fn is_interior(&self, node: usize) -> bool {
        node < self.interior_count
    }

    /// Elements containing `node`.
    pub fn patch(&self, node: usize) -> &[usize] {
        &self.patches[node]
    }

    pub fn centroid(&self, element: usize) -> Point {
        let el = &self.elements[element];
        let k = el.vertices.len() as f64;
        let mut c = [0.0; 2];
        for &v in &el.vertices {
            c[0] += self.nodes[v][0] / k;
            c[1] += self.nodes[v][1] / k;
        }
        c
    }

    /// Exact L1 norm of the hat function of `node`.
    pub fn hat_l1_norm(&self, node: usize) -> f64 {
        let share = 1.0 / (self.dim as f64 + 1.0);
        self.patches[node]
            .iter()
            .map(|&e| self.elements[e].volume * share)
            .sum()
    }

    /// Largest element diameter.
    pub fn mesh_size(&self) -> f64 {
        self.elements.iter().map(|e| e.diameter).fold(0.0, f64::max)
    }

    /// Barycentric coordinates of `x` relative to `element`.
    pub fn barycentric(&self, element: usize, x: Point) -> Vec<f64> {
        let el = &self.elements[element];
        // lambda_k(x) = lambda_k(v0) + grad_k . (x - v0), lambda_k(v0) = delta_k0
        let v0 = self.nodes[el.vertices[0]];
        let dx = [x[0] - v0[0], x[1] - v0[1]];
        el.gradients
            .iter()
            .enumerate()
            .map(|(k, g)| if k == 0 { 1.0 } else { 0.0 } + dot(*g, dx))
            .collect()
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate<F: Fn(Point) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|&p| f(p)).collect()
    }

    /// Strict-acuteness audit over distinct vertex pairs of each element.
    pub fn acuteness_certificate(&self) -> AcutenessCertificate {
        let mut sin_theta = f64::INFINITY;
        let mut worst_pair = None;
        for (e, el) in self.elements.iter().enumerate() {
            let k = el.vertices.len();
            for a in 0..k {
                for b in (a + 1)..k {
                    let (ga, gb) = (el.gradients[a], el.gradients[b]);
                    let value = -dot(ga, gb) / (norm(ga) * norm(gb));
                    if value < sin_theta {
                        sin_theta = value;
                        let (na, nb) = (el.vertices[a], el.vertices[b]);
                        worst_pair = Some((e, na.min(nb), na.max(nb)));
                    }
                }
            }
        }
        if sin_theta.abs() < ACUTE_SNAP {
            sin_theta = 0.0;
        }
        let sin_theta = sin_theta.clamp(-1.0, 1.0);
        AcutenessCertificate {
            sin_theta,
            strictly_acute: sin_theta > 0.0,
            worst_pair,
        }
    }

    /// Uniform refinement: intervals are bisected, triangles split into four
    /// by their edge midpoints. Node positions of the coarse mesh are kept.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let mut nodes: Vec<Point> = self.nodes.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (pa, pb) = (nodes[a], nodes[b]);
                nodes.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                nodes.len() - 1
            })
        };
        let mut cells = Vec::new();
        for el in &self.elements {
            let v = &el.vertices;
            if self.dim == 1 {
                let m = midpoint(v[0], v[1], &mut nodes);
                cells.push(vec![v[0], m]);
                cells.push(vec![m, v[1]]);
            } else {
                let m01 = midpoint(v[0], v[1], &mut nodes);
                let m12 = midpoint(v[1], v[2], &mut nodes);
                let m02 = midpoint(v[0], v[2], &mut nodes);
                cells.push(vec![v[0], m01, m02]);
                cells.push(vec![m01, v[1], m12]);
                cells.push(vec![m02, m12, v[2]]);
                cells.push(vec![m01, m12, m02]);
            }
        }
        Mesh::from_simplices(self.dim, nodes, cells)
    }

    /// Index of the node located at `x`, if any, within `tol`.
    pub fn find_node(&self, x: Point, tol: f64) -> Option<usize> {
        self.nodes.iter().position(|p| distance(*p, x) <= tol)
    }

    /// Relabels nodes by `perm` (old index -> new index). Used for
    /// invariance checks; interior-first ordering is re-established.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Mesh> {
        let n = self.node_count();
        if perm.len() != n {
            return Err(HjbError::DimensionMismatch {
                expected: n,
                found: perm.len(),
            });
        }
        let mut nodes = vec![[0.0; 2]; n];
        for (old, &new) in perm.iter().enumerate() {
            nodes[new] = self.nodes[old];
        }
        let cells = self
            .elements
            .iter()
            .map(|el| el.vertices.iter().map(|&v| perm[v]).collect())
            .collect();
        Mesh::from_simplices(self.dim, nodes, cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gradients_sum_to_zero() {
        let mesh = equilateral_mesh(Rect::unit(), 6, 6).unwrap();
        for el in mesh.elements() {
            let s = el
                .gradients
                .iter()
                .fold([0.0, 0.0], |acc, g| [acc[0] + g[0], acc[1] + g[1]]);
            assert!(norm(s) < 1e-12 * norm(el.gradients[0]));
        }
    }

    #[test]
    fn patches_match_element_membership() {
        let mesh = patterned_rectangle_mesh(Rect::unit(), 4, 4, Pattern::Inconsistent).unwrap();
        for node in 0..mesh.node_count() {
            let mut expected: Vec<usize> = mesh
                .elements()
                .iter()
                .enumerate()
                .filter(|(_, el)| el.vertices.contains(&node))
                .map(|(e, _)| e)
                .collect();
            expected.sort_unstable();
            let mut got = mesh.patch(node).to_vec();
            got.sort_unstable();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn interior_nodes_come_first() {
        let mesh = patterned_rectangle_mesh(Rect::unit(), 6, 4, Pattern::Consistent).unwrap();
        for (i, p) in mesh.nodes().iter().enumerate() {
            let on_edge = p[0].abs() < 1e-12
                || (p[0] - 1.0).abs() < 1e-12
                || p[1].abs() < 1e-12
                || (p[1] - 1.0).abs() < 1e-12;
            assert_eq!(mesh.is_interior(i), !on_edge, "node {i} at {p:?}");
        }
        assert_eq!(mesh.interior_count(), 5 * 3);
    }

    #[test]
    fn hat_norm_closed_form() {
        let mesh = interval_mesh(-1.0, 1.0, 4).unwrap();
        for i in 0..mesh.interior_count() {
            assert_relative_eq!(mesh.hat_l1_norm(i), 0.5, epsilon = 1e-15);
        }
        for i in mesh.interior_count()..mesh.node_count() {
            assert_relative_eq!(mesh.hat_l1_norm(i), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_element_mesh_size() {
        let mesh = Mesh::from_simplices(1, vec![[0.0, 0.0], [1.0, 0.0]], vec![vec![0, 1]]).unwrap();
        assert_eq!(mesh.mesh_size(), 1.0);
        assert_eq!(mesh.interior_count(), 0);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let err = Mesh::from_simplices(
            2,
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![vec![0, 1, 2]],
        );
        assert!(matches!(err, Err(HjbError::Mesh(_))));
    }

    #[test]
    fn consistent_pattern_is_not_strictly_acute() {
        let mesh = patterned_rectangle_mesh(Rect::unit(), 4, 4, Pattern::Consistent).unwrap();
        let cert = mesh.acuteness_certificate();
        assert_eq!(cert.sin_theta, 0.0);
        assert!(!cert.strictly_acute);
        assert!(cert.worst_pair.is_some());
    }

    #[test]
    fn interval_mesh_is_perfectly_acute() {
        let mesh = interval_mesh(-1.0, 1.0, 8).unwrap();
        let cert = mesh.acuteness_certificate();
        assert_relative_eq!(cert.sin_theta, 1.0, epsilon = 1e-14);
        assert!(cert.strictly_acute);
        assert_relative_eq!(mesh.mesh_size(), 0.25);
    }

    #[test]
    fn equilateral_sin_theta_is_one_half() {
        let mesh = equilateral_mesh(Rect::unit(), 5, 5).unwrap();
        let cert = mesh.acuteness_certificate();
        assert_relative_eq!(cert.sin_theta, 0.5, epsilon = 1e-12);
        assert_relative_eq!(mesh.mesh_size(), 0.2, epsilon = 1e-14);
    }

    #[test]
    fn refinement_preserves_geometry() {
        let mesh = equilateral_mesh(Rect::unit(), 3, 3).unwrap();
        let fine = mesh.refine_uniform().unwrap();
        let area = |m: &Mesh| m.elements().iter().map(|e| e.volume).sum::<f64>();
        assert_relative_eq!(area(&mesh), area(&fine), epsilon = 1e-13);
        assert_eq!(fine.elements().len(), 4 * mesh.elements().len());
        assert_relative_eq!(fine.acuteness_certificate().sin_theta, 0.5, epsilon = 1e-12);
        let line = interval_mesh(0.0, 1.0, 4).unwrap().refine_uniform().unwrap();
        assert_eq!(line.interior_count(), 7);
    }

    #[test]
    fn barycentric_reproduces_vertices() {
        let mesh = equilateral_mesh(Rect::unit(), 3, 3).unwrap();
        let el = &mesh.elements()[2];
        for (k, &v) in el.vertices.iter().enumerate() {
            let lam = mesh.barycentric(2, mesh.node(v));
            for (j, l) in lam.iter().enumerate() {
                let expected = if j == k { 1.0 } else { 0.0 };
                assert!((l - expected).abs() < 1e-12);
            }
        }
    }
}
