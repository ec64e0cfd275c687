use super::{Mesh, Point};

const BARY_TOL: f64 = 1e-10;

/// Bucket grid over the bounding box for element lookup.
#[derive(Debug, Clone)]
pub struct PointLocator {
    origin: Point,
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl PointLocator {
    pub fn new(mesh: &Mesh) -> PointLocator {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in mesh.nodes() {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let n_el = mesh.elements().len().max(1) as f64;
        let per_axis = if mesh.dim() == 1 { n_el } else { n_el.sqrt() };
        let nb = (per_axis.ceil() as usize).clamp(1, 4096);
        let dims = if mesh.dim() == 1 { [nb, 1] } else { [nb, nb] };
        let cell = [
            ((hi[0] - lo[0]) / dims[0] as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / dims[1] as f64).max(f64::MIN_POSITIVE),
        ];
        let mut locator = PointLocator {
            origin: lo,
            cell,
            dims,
            buckets: vec![Vec::new(); dims[0] * dims[1]],
        };
        for (e, el) in mesh.elements().iter().enumerate() {
            let mut blo = [f64::INFINITY; 2];
            let mut bhi = [f64::NEG_INFINITY; 2];
            for &v in &el.vertices {
                let p = mesh.node(v);
                for k in 0..2 {
                    blo[k] = blo[k].min(p[k]);
                    bhi[k] = bhi[k].max(p[k]);
                }
            }
            let (i0, j0) = locator.bucket_of(blo);
            let (i1, j1) = locator.bucket_of(bhi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    locator.buckets[j * dims[0] + i].push(e);
                }
            }
        }
        locator
    }

    fn bucket_of(&self, x: Point) -> (usize, usize) {
        let idx = |k: usize| {
            let t = ((x[k] - self.origin[k]) / self.cell[k]).floor();
            (t.max(0.0) as usize).min(self.dims[k] - 1)
        };
        (idx(0), idx(1))
    }

    /// Element containing `x` together with its barycentric coordinates.
    /// Points on shared facets resolve to the lowest-indexed element.
    pub fn locate(&self, mesh: &Mesh, x: Point) -> Option<(usize, Vec<f64>)> {
        let (i, j) = self.bucket_of(x);
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for &e in &self.buckets[j * self.dims[0] + i] {
            let lam = mesh.barycentric(e, x);
            let worst = lam.iter().cloned().fold(f64::INFINITY, f64::min);
            if worst >= -BARY_TOL && best.as_ref().map_or(true, |b| worst > b.2 + BARY_TOL) {
                best = Some((e, lam, worst));
            }
        }
        best.map(|(e, lam, _)| (e, lam))
    }
}
