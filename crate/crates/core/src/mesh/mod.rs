//! Simplicial meshes on axis-aligned boxes: construction, geometry queries,
//! point location and M-uniformity measures.

mod io;
mod quality;
mod reference;
mod topology;

use std::sync::Arc;

pub use io::{read_snapshot, write_snapshot};
pub use quality::{alignment_quality, equidistribution_quality};
pub use reference::ReferenceElement;
pub use topology::{Boundary, Face, FaceSide, Topology};

use crate::error::{Error, Result};
use crate::linalg::{small, Point, SMat};
use crate::scalar::{factorial, Real};

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxDomain<T, const D: usize> {
    pub lo: Point<T, D>,
    pub hi: Point<T, D>,
}

impl<T: Real, const D: usize> BoxDomain<T, D> {
    pub fn new(lo: Point<T, D>, hi: Point<T, D>) -> Result<Self> {
        for a in 0..D {
            let extent = hi[a] - lo[a];
            if !(extent > T::zero()) {
                return Err(Error::DegenerateDomain { axis: a, extent: extent.to_f64_lossy() });
            }
        }
        Ok(BoxDomain { lo, hi })
    }

    pub fn extent(&self, axis: usize) -> T {
        self.hi[axis] - self.lo[axis]
    }

    pub fn measure(&self) -> T {
        (0..D).map(|a| self.extent(a)).fold(T::one(), |p, e| p * e)
    }

    pub fn diameter(&self) -> T {
        (0..D).map(|a| self.extent(a) * self.extent(a)).sum::<T>().sqrt()
    }

    pub fn contains(&self, x: &Point<T, D>, tol: T) -> bool {
        (0..D).all(|a| x[a] >= self.lo[a] - tol && x[a] <= self.hi[a] + tol)
    }

    pub fn clamp(&self, x: &Point<T, D>) -> Point<T, D> {
        let mut out = *x;
        for a in 0..D {
            out[a] = out[a].max(self.lo[a]).min(self.hi[a]);
        }
        out
    }

    /// Wraps a point into the box along every (periodic) axis.
    pub fn wrap(&self, x: &Point<T, D>) -> Point<T, D> {
        let mut out = *x;
        for a in 0..D {
            let len = self.extent(a);
            let mut r = (out[a] - self.lo[a]) % len;
            if r < T::zero() {
                r += len;
            }
            out[a] = self.lo[a] + r;
        }
        out
    }
}

/// Barycentric coordinates of a point in a simplex; only the first `d + 1`
/// entries are meaningful.
pub type Bary<T> = [T; 3];

/// A simplicial mesh: vertex positions over shared, immutable connectivity.
#[derive(Clone, Debug)]
pub struct SimplicialMesh<T, const D: usize> {
    topology: Arc<Topology<D>>,
    vertices: Vec<Point<T, D>>,
    domain: BoxDomain<T, D>,
}

impl<T: Real, const D: usize> SimplicialMesh<T, D> {
    /// Uniform mesh with `resolution[a]` vertices along axis `a`. In 2D every
    /// grid cell is split along its lower-left to upper-right diagonal.
    pub fn uniform(domain: BoxDomain<T, D>, resolution: [usize; D]) -> Result<Self> {
        let domain = BoxDomain::new(domain.lo, domain.hi)?;
        if let Some(&r) = resolution.iter().find(|&&r| r < 2) {
            return Err(Error::InvalidResolution(r));
        }
        let mut vertices = Vec::new();
        let mut boundary = Vec::new();
        let mut elements = Vec::new();
        match D {
            1 => {
                let n = resolution[0];
                for i in 0..n {
                    let mut p = [T::zero(); D];
                    p[0] = grid_coord(&domain, 0, i, n);
                    vertices.push(p);
                    boundary.push(if i == 0 || i == n - 1 { Boundary::Corner } else { Boundary::Interior });
                }
                for i in 0..n - 1 {
                    elements.extend_from_slice(&[i, i + 1]);
                }
            }
            2 => {
                let (nx, ny) = (resolution[0], resolution[1]);
                let id = |i: usize, j: usize| j * nx + i;
                for j in 0..ny {
                    for i in 0..nx {
                        let mut p = [T::zero(); D];
                        p[0] = grid_coord(&domain, 0, i, nx);
                        p[1] = grid_coord(&domain, 1, j, ny);
                        vertices.push(p);
                        let on_x = i == 0 || i == nx - 1;
                        let on_y = j == 0 || j == ny - 1;
                        boundary.push(match (on_x, on_y) {
                            (true, true) => Boundary::Corner,
                            (true, false) => Boundary::Edge(if i == 0 { 0 } else { 1 }),
                            (false, true) => Boundary::Edge(if j == 0 { 2 } else { 3 }),
                            (false, false) => Boundary::Interior,
                        });
                    }
                }
                for j in 0..ny - 1 {
                    for i in 0..nx - 1 {
                        let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                        elements.extend_from_slice(&[a, b, c]);
                        elements.extend_from_slice(&[a, c, d]);
                    }
                }
            }
            _ => return Err(Error::InvalidParameter(format!("unsupported dimension {D}"))),
        }
        let topology = Topology::new(&vertices, elements, boundary, &domain.lo, &domain.hi)?;
        Self::from_parts(Arc::new(topology), vertices, domain)
    }

    /// Assembles a mesh, rejecting non-positive element volumes.
    pub fn from_parts(
        topology: Arc<Topology<D>>,
        vertices: Vec<Point<T, D>>,
        domain: BoxDomain<T, D>,
    ) -> Result<Self> {
        if vertices.len() != topology.n_vertices() {
            return Err(Error::LengthMismatch { expected: topology.n_vertices(), got: vertices.len() });
        }
        let mesh = SimplicialMesh { topology, vertices, domain };
        for k in 0..mesh.n_elements() {
            let v = mesh.signed_volume(k);
            if !(v > T::zero()) {
                return Err(Error::SingularElement { element: k, volume: v.to_f64_lossy() });
            }
        }
        Ok(mesh)
    }

    /// Same connectivity, new vertex positions; fails on tangling.
    pub fn with_vertices(&self, vertices: Vec<Point<T, D>>) -> Result<Self> {
        Self::from_parts(self.topology.clone(), vertices, self.domain).map_err(|e| match e {
            Error::SingularElement { element, volume } => Error::MeshTangled { element, volume },
            other => other,
        })
    }

    pub fn dim(&self) -> usize {
        D
    }

    pub fn topology(&self) -> &Arc<Topology<D>> {
        &self.topology
    }

    pub fn domain(&self) -> &BoxDomain<T, D> {
        &self.domain
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.topology.n_elements()
    }

    pub fn vertices(&self) -> &[Point<T, D>] {
        &self.vertices
    }

    #[inline]
    pub fn vertex(&self, j: usize) -> &Point<T, D> {
        &self.vertices[j]
    }

    #[inline]
    pub fn element(&self, k: usize) -> &[usize] {
        self.topology.element(k)
    }

    pub fn same_connectivity(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.topology, &other.topology) || self.topology.same_connectivity(&other.topology)
    }

    /// Columns are `x_i - x_0` for `i = 1..=d`.
    #[inline]
    pub fn edge_matrix(&self, k: usize) -> SMat<T, D> {
        edge_matrix_of(&self.vertices, self.element(k))
    }

    #[inline]
    pub fn signed_volume(&self, k: usize) -> T {
        self.edge_matrix(k).det() / factorial::<T>(D)
    }

    #[inline]
    pub fn volume(&self, k: usize) -> T {
        self.signed_volume(k).abs()
    }

    pub fn volumes(&self) -> Vec<T> {
        (0..self.n_elements()).map(|k| self.volume(k)).collect()
    }

    pub fn min_volume(&self) -> T {
        (0..self.n_elements()).map(|k| self.signed_volume(k)).fold(T::infinity(), T::min)
    }

    pub fn centroid(&self, k: usize) -> Point<T, D> {
        let mut c = [T::zero(); D];
        for &v in self.element(k) {
            c = small::add(&c, &self.vertices[v]);
        }
        small::scale(&c, T::one() / T::from_count(D + 1))
    }

    /// Longest edge length.
    pub fn diameter(&self, k: usize) -> T {
        let e = self.element(k);
        let mut d = T::zero();
        for a in 0..e.len() {
            for b in (a + 1)..e.len() {
                d = d.max(small::distance(&self.vertices[e[a]], &self.vertices[e[b]]));
            }
        }
        d
    }

    /// Smallest element height (the length itself in 1D).
    pub fn min_height(&self, k: usize) -> T {
        match D {
            1 => self.volume(k),
            _ => T::from_count(D) * self.volume(k) / self.max_face_measure(k),
        }
    }

    fn max_face_measure(&self, k: usize) -> T {
        let e = self.element(k);
        let mut m = T::zero();
        for opp in 0..=D {
            m = m.max(face_measure(&self.vertices, e, opp));
        }
        m
    }

    pub fn mean_diameter(&self) -> T {
        let n = self.n_elements();
        (0..n).map(|k| self.diameter(k)).sum::<T>() / T::from_count(n)
    }

    /// Barycentric coordinates of `x` with respect to element `k`.
    pub fn barycentric(&self, k: usize, x: &Point<T, D>) -> Bary<T> {
        let e = self.element(k);
        let inv = self.edge_matrix(k).inverse().expect("nonsingular element");
        let local = inv.mul_vec(&small::sub(x, &self.vertices[e[0]]));
        let mut b = [T::zero(); 3];
        let mut rest = T::one();
        for i in 0..D {
            b[i + 1] = local[i];
            rest -= local[i];
        }
        b[0] = rest;
        b
    }

    fn tolerance(&self) -> T {
        T::lit(1e-12).max(T::epsilon() * T::lit(64.0)) * self.domain.diameter().max(T::one())
    }

    /// Finds the lowest-indexed element containing `x` and the point's
    /// barycentric coordinates there (clamped to `[0, 1]`, summing to 1).
    pub fn locate_point(&self, x: &Point<T, D>) -> Result<(usize, Vec<T>)> {
        let tol = self.tolerance();
        if !self.domain.contains(x, tol) {
            return Err(out_of_domain(x));
        }
        for k in 0..self.n_elements() {
            let b = self.barycentric(k, x);
            if b[..=D].iter().all(|&l| l >= -tol) {
                return Ok((k, clean_bary::<T, D>(b)[..=D].to_vec()));
            }
        }
        Err(out_of_domain(x))
    }

    /// Point location by a directed walk from `hint`, falling back to a
    /// full scan. Faster than [`Self::locate_point`] but with no tie rule.
    pub fn locate_from(&self, hint: usize, x: &Point<T, D>) -> Result<(usize, Bary<T>)> {
        let tol = self.tolerance();
        let mut k = hint.min(self.n_elements().saturating_sub(1));
        for _ in 0..self.n_elements() {
            let b = self.barycentric(k, x);
            let (worst, min) = b[..=D]
                .iter()
                .enumerate()
                .fold((0, T::infinity()), |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc });
            if min >= -tol {
                return Ok((k, clean_bary::<T, D>(b)));
            }
            match self.topology.neighbor(k, worst) {
                Some(n) => k = n,
                None => break,
            }
        }
        let (k, b) = self.locate_point(x)?;
        let mut out = [T::zero(); 3];
        out[..=D].copy_from_slice(&b);
        Ok((k, out))
    }

    /// Outward unit normal and measure of the face of `k` opposite local vertex `opp`.
    pub fn face_normal(&self, k: usize, opp: usize) -> (Point<T, D>, T) {
        face_normal_of(&self.vertices, self.element(k), opp)
    }

    /// Volume-weighted vertex average of a per-element quantity.
    pub fn vertex_average<V, F>(&self, j: usize, value: F) -> V
    where
        F: Fn(usize) -> V,
        V: std::ops::Mul<T, Output = V> + std::ops::Add<Output = V>,
    {
        let patch = self.topology.patch(j);
        let mut total = T::zero();
        let mut acc: Option<V> = None;
        for &(k, _) in patch {
            let w = self.volume(k);
            total += w;
            let term = value(k) * w;
            acc = Some(match acc {
                Some(a) => a + term,
                None => term,
            });
        }
        acc.expect("vertex belongs to at least one element") * (T::one() / total)
    }
}

fn grid_coord<T: Real, const D: usize>(domain: &BoxDomain<T, D>, axis: usize, i: usize, n: usize) -> T {
    if i == n - 1 {
        domain.hi[axis]
    } else {
        domain.lo[axis] + domain.extent(axis) * T::from_count(i) / T::from_count(n - 1)
    }
}

fn out_of_domain<T: Real, const D: usize>(x: &Point<T, D>) -> Error {
    Error::OutOfDomain { point: x.iter().map(|v| v.to_f64_lossy()).collect() }
}

fn clean_bary<T: Real, const D: usize>(mut b: Bary<T>) -> Bary<T> {
    let mut sum = T::zero();
    for l in b[..=D].iter_mut() {
        *l = l.max(T::zero()).min(T::one());
        sum += *l;
    }
    for l in b[..=D].iter_mut() {
        *l /= sum;
    }
    b
}

#[inline]
pub(crate) fn edge_matrix_of<T: Real, const D: usize>(vertices: &[Point<T, D>], elem: &[usize]) -> SMat<T, D> {
    let x0 = vertices[elem[0]];
    SMat::from_fn(|r, c| vertices[elem[c + 1]][r] - x0[r])
}

pub(crate) fn face_measure<T: Real, const D: usize>(vertices: &[Point<T, D>], elem: &[usize], opp: usize) -> T {
    face_normal_of(vertices, elem, opp).1
}

pub(crate) fn face_normal_of<T: Real, const D: usize>(
    vertices: &[Point<T, D>],
    elem: &[usize],
    opp: usize,
) -> (Point<T, D>, T) {
    let locals = topology::face_locals::<D>(opp);
    let xo = vertices[elem[opp]];
    match D {
        1 => {
            let xf = vertices[elem[locals[0]]];
            let mut n = [T::zero(); D];
            n[0] = if xf[0] > xo[0] { T::one() } else { -T::one() };
            (n, T::one())
        }
        2 => {
            let a = vertices[elem[locals[0]]];
            let b = vertices[elem[locals[1]]];
            let t = small::sub(&b, &a);
            let len = small::norm(&t);
            let mut n = [T::zero(); D];
            n[0] = t[1] / len;
            n[1] = -t[0] / len;
            if small::dot(&n, &small::sub(&xo, &a)) > T::zero() {
                n[0] = -n[0];
                n[1] = -n[1];
            }
            (n, len)
        }
        _ => panic!("only spatial dimensions 1 and 2 are supported"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square(n: usize) -> SimplicialMesh<f64, 2> {
        SimplicialMesh::uniform(BoxDomain::new([0.0, 0.0], [1.0, 1.0]).unwrap(), [n, n]).unwrap()
    }

    #[test]
    fn uniform_1d_burgers_mesh() {
        let d = BoxDomain::new([0.0], [20.0]).unwrap();
        let m: SimplicialMesh<f64, 1> = SimplicialMesh::uniform(d, [50]).unwrap();
        assert_eq!(m.n_vertices(), 50);
        assert_eq!(m.n_elements(), 49);
        for k in 0..49 {
            assert!((m.volume(k) - 20.0 / 49.0).abs() < 1e-12);
        }
        assert_eq!(m.topology().boundary(0), Boundary::Corner);
        assert_eq!(m.topology().boundary(49), Boundary::Corner);
        assert_eq!(m.topology().boundary(10), Boundary::Interior);
        // 48 interior faces plus the periodic pair
        assert_eq!(m.topology().faces().len(), 49);
        assert_eq!(m.topology().faces().iter().filter(|f| f.periodic).count(), 1);
        assert_eq!(m.topology().periodic_images(49), &[0, 49]);
    }

    #[test]
    fn uniform_2d_counts_and_markers() {
        let d = BoxDomain::new([-0.5, -0.5], [1.0, 1.0]).unwrap();
        let m: SimplicialMesh<f64, 2> = SimplicialMesh::uniform(d, [15, 15]).unwrap();
        assert_eq!(m.n_elements(), 2 * 14 * 14);
        assert_eq!(m.n_vertices(), 225);
        let total: f64 = m.volumes().iter().sum();
        assert!((total - 2.25).abs() < 1e-12);
        let corners = m.topology().boundary_markers().iter().filter(|b| **b == Boundary::Corner).count();
        assert_eq!(corners, 4);
        // every element has three faces, all paired under periodicity
        assert_eq!(m.topology().faces().len(), 3 * m.n_elements() / 2);
        let periodic = m.topology().faces().iter().filter(|f| f.periodic).count();
        assert_eq!(periodic, 2 * 14);
        // sliding partners pair opposite sides
        let left = 15; // (0, 1)
        assert_eq!(m.topology().boundary(left), Boundary::Edge(0));
        assert_eq!(m.topology().partner(left), Some(15 + 14));
        assert_eq!(m.topology().periodic_images(left), &[15, 29]);
        assert_eq!(m.topology().periodic_images(0), &[0, 14, 210, 224]);
        assert_eq!(m.topology().periodic_images(16), &[16]);
    }

    #[test]
    fn smallest_mesh_and_degenerate_input() {
        let m: SimplicialMesh<f64, 1> = SimplicialMesh::uniform(BoxDomain { lo: [0.0], hi: [1.0] }, [2]).unwrap();
        assert_eq!(m.n_elements(), 1);
        assert!((m.volume(0) - 1.0).abs() < 1e-15);
        assert!(matches!(BoxDomain::new([1.0], [1.0]), Err(Error::DegenerateDomain { .. })));
        assert!(matches!(
            SimplicialMesh::uniform(BoxDomain { lo: [0.0], hi: [1.0] }, [1]),
            Err(Error::InvalidResolution(1))
        ));
    }

    #[test]
    fn edge_matrices() {
        let m: SimplicialMesh<f64, 1> = SimplicialMesh::uniform(BoxDomain { lo: [0.0], hi: [1.0] }, [3]).unwrap();
        assert_eq!(m.edge_matrix(0).0, [[0.5]]);
        assert!((m.volume(0) - 0.5).abs() < 1e-15);
        let sq = unit_square(2);
        // element 0 = (0,0),(1,0),(1,1); element 1 = (0,0),(1,1),(0,1)
        let e = sq.edge_matrix(0);
        assert_eq!(e.0, [[1.0, 1.0], [0.0, 1.0]]);
        assert!((sq.volume(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn locate_vertex_and_centroid() {
        let m = unit_square(5);
        let c = m.centroid(7);
        let (k, b) = m.locate_point(&c).unwrap();
        assert_eq!(k, 7);
        for l in &b {
            assert!((l - 1.0 / 3.0).abs() < 1e-12);
        }
        let v = *m.vertex(6);
        let (k, b) = m.locate_point(&v).unwrap();
        assert_eq!(k, m.topology().patch(6).iter().map(|p| p.0).min().unwrap());
        assert!(b.iter().any(|&l| (l - 1.0).abs() < 1e-12));
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(m.locate_point(&[1.5, 0.5]), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn face_normals_point_outward() {
        let m = unit_square(3);
        for k in 0..m.n_elements() {
            let c = m.centroid(k);
            for opp in 0..3 {
                let (n, len) = m.face_normal(k, opp);
                let e = m.element(k);
                let f = topology::face_locals::<2>(opp);
                let mid = small::scale(&small::add(m.vertex(e[f[0]]), m.vertex(e[f[1]])), 0.5);
                assert!(small::dot(&n, &small::sub(&mid, &c)) > 0.0);
                assert!(len > 0.0);
            }
        }
    }

    #[test]
    fn tangled_vertices_rejected() {
        let m: SimplicialMesh<f64, 1> = SimplicialMesh::uniform(BoxDomain { lo: [0.0], hi: [1.0] }, [4]).unwrap();
        let mut v = m.vertices().to_vec();
        v[1][0] = 0.8;
        assert!(matches!(m.with_vertices(v), Err(Error::MeshTangled { element: 1, .. })));
    }
}
