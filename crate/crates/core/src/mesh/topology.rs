//! Connectivity shared by every mesh of a run: elements, vertex patches,
//! face adjacency (plain and periodic) and boundary markers.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Point;
use crate::scalar::Real;

/// Boundary classification of a vertex on an axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    Interior,
    /// Vertex on a box side. Side ids are `2 * axis` (low) and
    /// `2 * axis + 1` (high); the vertex may slide along the side but its
    /// `axis` coordinate is fixed.
    Edge(u8),
    /// Vertex fixed in place (box corners, and the two ends of a 1D mesh).
    Corner,
}

impl Boundary {
    pub fn fixed_axis(self) -> Option<usize> {
        match self {
            Boundary::Edge(id) => Some(id as usize / 2),
            _ => None,
        }
    }

    pub fn is_fixed(self) -> bool {
        matches!(self, Boundary::Corner)
    }
}

/// One side of a face: the owning element, the local index of the vertex
/// opposite the face, and the local indices of the face vertices. Face
/// vertices on the two sides of a [`Face`] are listed in matching order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaceSide<const D: usize> {
    pub element: usize,
    pub opposite: usize,
    pub locals: [usize; D],
}

/// A face shared by two elements, either through the mesh interior or
/// through the periodic identification of opposite box sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Face<const D: usize> {
    pub sides: [FaceSide<D>; 2],
    pub periodic: bool,
}

#[derive(Clone, Debug)]
pub struct Topology<const D: usize> {
    n_vertices: usize,
    elements: Vec<usize>,
    boundary: Vec<Boundary>,
    /// Matching vertex on the opposite box side for sliding edge vertices.
    partner: Vec<Option<usize>>,
    /// Elements containing each vertex, with the vertex's local index.
    patches: Vec<Vec<(usize, usize)>>,
    /// Non-periodic neighbor across the face opposite each local vertex.
    neighbors: Vec<[Option<usize>; 3]>,
    /// Interior and periodic faces (both sides present).
    faces: Vec<Face<D>>,
    /// Vertices identified with each vertex under periodicity, itself included.
    images: Vec<Vec<usize>>,
}

impl<const D: usize> Topology<D> {
    pub const VERTS_PER_ELEMENT: usize = D + 1;

    /// Builds connectivity from element tuples. Vertex positions are used
    /// only to pair boundary faces on opposite sides of the box.
    pub fn new<T: Real>(
        vertices: &[Point<T, D>],
        elements: Vec<usize>,
        boundary: Vec<Boundary>,
        lo: &Point<T, D>,
        hi: &Point<T, D>,
    ) -> Result<Self> {
        let nv = vertices.len();
        let stride = D + 1;
        if elements.len() % stride != 0 {
            return Err(Error::Parse("element list length is not a multiple of d+1".into()));
        }
        if boundary.len() != nv {
            return Err(Error::LengthMismatch { expected: nv, got: boundary.len() });
        }
        if let Some(&bad) = elements.iter().find(|&&v| v >= nv) {
            return Err(Error::Parse(format!("element references vertex {bad} of {nv}")));
        }
        let ne = elements.len() / stride;

        let mut patches = vec![Vec::new(); nv];
        for k in 0..ne {
            for (l, &v) in elements[k * stride..(k + 1) * stride].iter().enumerate() {
                patches[v].push((k, l));
            }
        }

        // interior faces by sorted vertex key
        let mut open: BTreeMap<[usize; D], FaceSide<D>> = BTreeMap::new();
        let mut faces = Vec::new();
        let mut neighbors = vec![[None; 3]; ne];
        for k in 0..ne {
            let elem = &elements[k * stride..(k + 1) * stride];
            for opp in 0..stride {
                let locals = face_locals::<D>(opp);
                let mut key = [0usize; D];
                for (m, &l) in locals.iter().enumerate() {
                    key[m] = elem[l];
                }
                key.sort_unstable();
                let side = FaceSide { element: k, opposite: opp, locals };
                if let Some(other) = open.remove(&key) {
                    neighbors[k][opp] = Some(other.element);
                    neighbors[other.element][other.opposite] = Some(k);
                    let aligned = align_side(&elements, stride, &other, &side, |v| v);
                    faces.push(Face { sides: [other, aligned], periodic: false });
                } else {
                    open.insert(key, side);
                }
            }
        }

        // Remaining faces lie on the box boundary; pair low and high sides.
        let scale = (0..D).fold(T::zero(), |m, a| m.max(hi[a] - lo[a]));
        let tol = scale * T::lit(1e-9);
        let on_side = |v: usize, axis: usize, high: bool| {
            let target = if high { hi[axis] } else { lo[axis] };
            (vertices[v][axis] - target).abs() <= tol
        };
        let mut partner = vec![None; nv];
        let mut boundary_faces: Vec<FaceSide<D>> = open.into_values().collect();
        boundary_faces.sort_by_key(|s| (s.element, s.opposite));
        for axis in 0..D {
            // vertex map from low side to high side along this axis
            let lows: Vec<usize> = (0..nv).filter(|&v| on_side(v, axis, false)).collect();
            let highs: Vec<usize> = (0..nv).filter(|&v| on_side(v, axis, true)).collect();
            let mut map = BTreeMap::new();
            for &a in &lows {
                let found = highs.iter().copied().find(|&b| {
                    (0..D).all(|c| c == axis || (vertices[a][c] - vertices[b][c]).abs() <= tol)
                });
                if let Some(b) = found {
                    map.insert(a, b);
                }
            }
            for (&a, &b) in &map {
                if let Boundary::Edge(id) = boundary[a] {
                    if id as usize / 2 == axis {
                        partner[a] = Some(b);
                        partner[b] = Some(a);
                    }
                }
            }
            let face_on = |s: &FaceSide<D>, high: bool| {
                let elem = &elements[s.element * stride..(s.element + 1) * stride];
                s.locals.iter().all(|&l| on_side(elem[l], axis, high))
            };
            let low_faces: Vec<FaceSide<D>> =
                boundary_faces.iter().copied().filter(|s| face_on(s, false)).collect();
            let high_faces: Vec<FaceSide<D>> =
                boundary_faces.iter().copied().filter(|s| face_on(s, true)).collect();
            for lf in &low_faces {
                let elem = &elements[lf.element * stride..(lf.element + 1) * stride];
                let mut key: Vec<usize> = Vec::with_capacity(D);
                for &l in &lf.locals {
                    match map.get(&elem[l]) {
                        Some(&b) => key.push(b),
                        None => break,
                    }
                }
                if key.len() != D {
                    continue;
                }
                key.sort_unstable();
                let matched = high_faces.iter().find(|hf| {
                    let he = &elements[hf.element * stride..(hf.element + 1) * stride];
                    let mut hk: Vec<usize> = hf.locals.iter().map(|&l| he[l]).collect();
                    hk.sort_unstable();
                    hk == key
                });
                if let Some(hf) = matched {
                    let aligned = align_side(&elements, stride, lf, hf, |v| map.get(&v).copied().unwrap_or(v));
                    faces.push(Face { sides: [*lf, aligned], periodic: true });
                }
            }
        }

        // union-find over vertex pairs glued by periodic faces
        let mut parent: Vec<usize> = (0..nv).collect();
        fn root(parent: &mut [usize], mut v: usize) -> usize {
            while parent[v] != v {
                parent[v] = parent[parent[v]];
                v = parent[v];
            }
            v
        }
        for f in faces.iter().filter(|f| f.periodic) {
            let [a, b] = f.sides;
            for m in 0..D {
                let va = elements[a.element * stride + a.locals[m]];
                let vb = elements[b.element * stride + b.locals[m]];
                let (ra, rb) = (root(&mut parent, va), root(&mut parent, vb));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..nv {
            let r = root(&mut parent, v);
            classes.entry(r).or_default().push(v);
        }
        let mut images = vec![Vec::new(); nv];
        for class in classes.into_values() {
            for &v in &class {
                images[v] = class.clone();
            }
        }

        Ok(Topology { n_vertices: nv, elements, boundary, partner, patches, neighbors, faces, images })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (D + 1)
    }

    #[inline]
    pub fn element(&self, k: usize) -> &[usize] {
        &self.elements[k * (D + 1)..(k + 1) * (D + 1)]
    }

    pub fn elements_flat(&self) -> &[usize] {
        &self.elements
    }

    pub fn boundary(&self, v: usize) -> Boundary {
        self.boundary[v]
    }

    pub fn boundary_markers(&self) -> &[Boundary] {
        &self.boundary
    }

    pub fn partner(&self, v: usize) -> Option<usize> {
        self.partner[v]
    }

    /// Elements in the patch of vertex `v`, each with the vertex's local index.
    pub fn patch(&self, v: usize) -> &[(usize, usize)] {
        &self.patches[v]
    }

    /// Non-periodic neighbor across the face opposite local vertex `opp`.
    pub fn neighbor(&self, k: usize, opp: usize) -> Option<usize> {
        self.neighbors[k][opp]
    }

    /// Vertices sharing a periodic identity with `v` (including `v`), ascending.
    pub fn periodic_images(&self, v: usize) -> &[usize] {
        &self.images[v]
    }

    pub fn faces(&self) -> &[Face<D>] {
        &self.faces
    }

    pub fn same_connectivity(&self, other: &Topology<D>) -> bool {
        self.n_vertices == other.n_vertices && self.elements == other.elements
    }
}

/// Local vertex indices of the face opposite local vertex `opp`.
pub(crate) fn face_locals<const D: usize>(opp: usize) -> [usize; D] {
    let mut out = [0usize; D];
    let mut m = 0;
    for l in 0..=D {
        if l != opp {
            out[m] = l;
            m += 1;
        }
    }
    out
}

/// Reorders `side.locals` so that its vertices correspond, through `map`,
/// to the face vertices of `reference`.
fn align_side<const D: usize>(
    elements: &[usize],
    stride: usize,
    reference: &FaceSide<D>,
    side: &FaceSide<D>,
    map: impl Fn(usize) -> usize,
) -> FaceSide<D> {
    let re = &elements[reference.element * stride..(reference.element + 1) * stride];
    let se = &elements[side.element * stride..(side.element + 1) * stride];
    let mut locals = side.locals;
    for m in 0..D {
        let target = map(re[reference.locals[m]]);
        if let Some(&l) = side.locals.iter().find(|&&l| se[l] == target) {
            locals[m] = l;
        }
    }
    FaceSide { locals, ..*side }
}
