//! Mesh movement by the gradient flow of the discrete meshing energy,
//! integrated in computational coordinates with the physical mesh frozen.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{small, Point, SMat};
use crate::mesh::{Boundary, SimplicialMesh};
use crate::metric::MetricField;
use crate::scalar::Real;
use crate::interp::dg_interpolate;
use crate::solver::{state_metric, DgState, SolverParams};

/// Mesh-movement settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmpdeParams<T> {
    pub tau: T,
    /// Nominal number of explicit substeps per physical step.
    pub substeps: usize,
    /// Pseudo-time used for each iteration of common-mesh generation.
    pub common_dt: T,
    pub common_max_iters: usize,
    /// Stop when the max displacement drops below this fraction of the mean diameter.
    pub common_tol: T,
}

impl<T: Real> Default for MmpdeParams<T> {
    fn default() -> Self {
        MmpdeParams {
            tau: T::lit(0.1),
            substeps: 5,
            common_dt: T::lit(0.5),
            common_max_iters: 50,
            common_tol: T::lit(1e-4),
        }
    }
}

/// Physical mesh, current computational mesh, and the fixed uniform
/// reference computational mesh.
#[derive(Clone, Debug)]
pub struct MeshTriple<T, const D: usize> {
    physical: SimplicialMesh<T, D>,
    computational: Vec<Point<T, D>>,
    reference: Arc<SimplicialMesh<T, D>>,
    substep_hint: Option<T>,
}

impl<T: Real, const D: usize> MeshTriple<T, D> {
    /// Starts with all three meshes equal to `reference`.
    pub fn new(reference: SimplicialMesh<T, D>) -> Self {
        let computational = reference.vertices().to_vec();
        MeshTriple { physical: reference.clone(), computational, reference: Arc::new(reference), substep_hint: None }
    }

    /// Triple with a given physical mesh over a shared reference.
    pub fn with_physical(reference: Arc<SimplicialMesh<T, D>>, physical: SimplicialMesh<T, D>) -> Result<Self> {
        if !physical.same_connectivity(&reference) {
            return Err(Error::InvalidParameter("physical and reference meshes differ in connectivity".into()));
        }
        let computational = reference.vertices().to_vec();
        Ok(MeshTriple { physical, computational, reference, substep_hint: None })
    }

    pub fn physical(&self) -> &SimplicialMesh<T, D> {
        &self.physical
    }

    pub fn computational(&self) -> &[Point<T, D>] {
        &self.computational
    }

    pub fn reference(&self) -> &Arc<SimplicialMesh<T, D>> {
        &self.reference
    }
}

/// Per-element data that stays fixed while the computational mesh moves.
struct Frozen<T, const D: usize> {
    volume: Vec<T>,
    det_e: Vec<T>,
    e_inv: Vec<SMat<T, D>>,
    m_inv: Vec<SMat<T, D>>,
    sqrt_det_m: Vec<T>,
    det_m: Vec<T>,
    /// sqrt(det M(x_j)) / tau per vertex.
    precond: Vec<T>,
}

impl<T: Real, const D: usize> Frozen<T, D> {
    fn new(mesh: &SimplicialMesh<T, D>, metric: &[SMat<T, D>], tau: T) -> Result<Self> {
        let ne = mesh.n_elements();
        if metric.len() != ne {
            return Err(Error::LengthMismatch { expected: ne, got: metric.len() });
        }
        let mut f = Frozen {
            volume: Vec::with_capacity(ne),
            det_e: Vec::with_capacity(ne),
            e_inv: Vec::with_capacity(ne),
            m_inv: Vec::with_capacity(ne),
            sqrt_det_m: Vec::with_capacity(ne),
            det_m: Vec::with_capacity(ne),
            precond: Vec::new(),
        };
        for (k, m) in metric.iter().enumerate() {
            let e = mesh.edge_matrix(k);
            let det = e.det();
            if !(det > T::zero()) {
                return Err(Error::SingularElement { element: k, volume: det.to_f64_lossy() });
            }
            f.volume.push(mesh.volume(k));
            f.det_e.push(det);
            f.e_inv.push(e.inverse().expect("nonzero determinant"));
            let dm = m.det();
            f.m_inv.push(m.inverse().ok_or(Error::NotSpd { eigenvalue: 0.0 })?);
            f.det_m.push(dm);
            f.sqrt_det_m.push(dm.sqrt());
        }
        f.precond = (0..mesh.n_vertices())
            .map(|j| mesh.vertex_average(j, |k| metric[k]).det().sqrt() / tau)
            .collect();
        Ok(f)
    }
}

/// Coefficient `d^{3d/4}`.
fn d_pow<T: Real, const D: usize>() -> T {
    let d = T::from_count(D);
    d.powf(T::lit(0.75) * d)
}

fn comp_edge<T: Real, const D: usize>(xi: &[Point<T, D>], elem: &[usize]) -> SMat<T, D> {
    let x0 = xi[elem[0]];
    SMat::from_fn(|r, c| xi[elem[c + 1]][r] - x0[r])
}

fn energy_frozen<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    f: &Frozen<T, D>,
    xi: &[Point<T, D>],
) -> Result<T> {
    let third = T::one() / T::lit(3.0);
    let p = T::lit(0.75) * T::from_count(D);
    let dp = d_pow::<T, D>();
    let mut total = T::zero();
    for k in 0..mesh.n_elements() {
        let ec = comp_edge(xi, mesh.element(k));
        let det_c = ec.det();
        if !(det_c > T::zero()) {
            return Err(Error::SingularElement { element: k, volume: det_c.to_f64_lossy() });
        }
        let j = ec * f.e_inv[k];
        let tr = (j * f.m_inv[k] * j.transpose()).trace();
        let det_j = det_c / f.det_e[k];
        let s = f.sqrt_det_m[k];
        let g = third * s * tr.powf(p) + third * dp * s * (det_j / s).powf(T::lit(1.5));
        total += f.volume[k] * g;
    }
    Ok(total)
}

/// `dI_h / d xi_j` for every computational vertex.
fn gradient_frozen<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    f: &Frozen<T, D>,
    xi: &[Point<T, D>],
) -> Result<Vec<Point<T, D>>> {
    let p = T::lit(0.75) * T::from_count(D);
    let half_d = T::from_count(D) * T::lit(0.5);
    let dp = d_pow::<T, D>();
    let mut grad = vec![[T::zero(); D]; xi.len()];
    for k in 0..mesh.n_elements() {
        let elem = mesh.element(k);
        let ec = comp_edge(xi, elem);
        let det_c = ec.det();
        if !(det_c > T::zero()) {
            return Err(Error::SingularElement { element: k, volume: det_c.to_f64_lossy() });
        }
        let ec_inv = ec.inverse().expect("nonzero determinant");
        let j = ec * f.e_inv[k];
        let tr = (j * f.m_inv[k] * j.transpose()).trace();
        let det_j = det_c / f.det_e[k];
        let s = f.sqrt_det_m[k];
        let dg_dj = (f.m_inv[k] * j.transpose()).scale(half_d * s * tr.powf(p - T::one()));
        let dg_ddet = T::lit(0.5) * dp * f.det_m[k].powf(-T::lit(0.25)) * det_j.sqrt();
        let q = f.e_inv[k] * dg_dj + ec_inv.scale(dg_ddet * det_j);
        let w = f.volume[k];
        let mut g0 = [T::zero(); D];
        for i in 0..D {
            let v = elem[i + 1];
            for a in 0..D {
                let gi = w * q[(i, a)];
                grad[v][a] += gi;
                g0[a] -= gi;
            }
        }
        for a in 0..D {
            grad[elem[0]][a] += g0[a];
        }
    }
    Ok(grad)
}

/// Meshing energy `I_h` of the computational mesh `xi` against the
/// physical mesh and its metric.
pub fn energy<T: Real, const D: usize>(
    physical: &SimplicialMesh<T, D>,
    xi: &[Point<T, D>],
    metric: &MetricField<T, D>,
) -> Result<T> {
    let f = Frozen::new(physical, metric.tensors(), T::one())?;
    energy_frozen(physical, &f, xi)
}

/// Gradient of [`energy`] with respect to the computational vertices.
pub fn energy_gradient<T: Real, const D: usize>(
    physical: &SimplicialMesh<T, D>,
    xi: &[Point<T, D>],
    metric: &MetricField<T, D>,
) -> Result<Vec<Point<T, D>>> {
    let f = Frozen::new(physical, metric.tensors(), T::one())?;
    gradient_frozen(physical, &f, xi)
}

/// Applies the preconditioner and the boundary rule to a raw gradient:
/// fixed vertices do not move, edge vertices keep their normal coordinate,
/// and periodic partners share one tangential velocity.
fn velocities_from_gradient<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    precond: &[T],
    grad: &[Point<T, D>],
) -> Vec<Point<T, D>> {
    let topo = mesh.topology();
    let half = T::lit(0.5);
    let mut vel = vec![[T::zero(); D]; grad.len()];
    for j in 0..grad.len() {
        match topo.boundary(j) {
            Boundary::Corner => {}
            Boundary::Interior => vel[j] = small::scale(&grad[j], -precond[j]),
            Boundary::Edge(id) => {
                let axis = id as usize / 2;
                let (w, p) = match topo.partner(j) {
                    Some(b) => (
                        small::scale(&small::add(&grad[j], &grad[b]), -half),
                        half * (precond[j] + precond[b]),
                    ),
                    None => (small::scale(&grad[j], -T::one()), precond[j]),
                };
                vel[j] = small::scale(&w, p);
                vel[j][axis] = T::zero();
            }
        }
    }
    vel
}

/// `d xi_j / dt = (sqrt(det M(x_j)) / tau) sum_K |K| v^K_{j_K}` with the
/// boundary rule applied.
pub fn nodal_velocities<T: Real, const D: usize>(
    physical: &SimplicialMesh<T, D>,
    xi: &[Point<T, D>],
    metric: &MetricField<T, D>,
    tau: T,
) -> Result<Vec<Point<T, D>>> {
    let f = Frozen::new(physical, metric.tensors(), tau)?;
    let grad = gradient_frozen(physical, &f, xi)?;
    Ok(velocities_from_gradient(physical, &f.precond, &grad))
}

/// Diagnostics from one [`move_mesh`] call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MoveReport<T> {
    /// Energy after every accepted substep, starting with the initial value.
    pub energies: Vec<T>,
    pub rejected: usize,
    pub max_displacement: T,
}

impl<T: Real> MoveReport<T> {
    /// Largest relative energy increase between consecutive substeps (zero or negative if monotone).
    pub fn max_energy_increase(&self) -> T {
        self.energies
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0].abs().max(T::min_positive_value()))
            .fold(T::neg_infinity(), T::max)
            .max(T::zero())
    }
}

const ENERGY_TOL: f64 = 1e-13;

/// Integrates the computational mesh over pseudo-time `dt` from the
/// reference mesh, then maps the reference vertices through the resulting
/// correspondence to obtain the new physical mesh.
///
/// Substeps start at `dt / substeps`; a substep that raises the energy or
/// tangles the computational mesh is halved and retried, and the accepted
/// size is carried over to the next call.
pub fn move_mesh<T: Real, const D: usize>(
    triple: &MeshTriple<T, D>,
    metric: &MetricField<T, D>,
    params: &MmpdeParams<T>,
    dt: T,
) -> Result<(MeshTriple<T, D>, MoveReport<T>)> {
    let mesh = &triple.physical;
    let f = Frozen::new(mesh, metric.tensors(), params.tau)?;
    let mut xi = triple.reference.vertices().to_vec();
    let mut e = energy_frozen(mesh, &f, &xi)?;
    let mut report = MoveReport { energies: vec![e], rejected: 0, max_displacement: T::zero() };
    let nominal = dt / T::from_count(params.substeps.max(1));
    let mut h = triple.substep_hint.unwrap_or(nominal).min(nominal);
    let min_h = dt * T::lit(1e-12);
    let mut remaining = dt;
    let mut trial = xi.clone();
    let mut hint = h;
    while remaining > dt * T::lit(1e-12) {
        let grad = gradient_frozen(mesh, &f, &xi)?;
        let vel = velocities_from_gradient(mesh, &f.precond, &grad);
        let mut accepted = false;
        let mut step = h.min(remaining);
        while step > min_h {
            for (t, (x, v)) in trial.iter_mut().zip(xi.iter().zip(&vel)) {
                *t = small::add(x, &small::scale(v, step));
            }
            match energy_frozen(mesh, &f, &trial) {
                Ok(en) if en <= e + T::lit(ENERGY_TOL) * e.abs() => {
                    std::mem::swap(&mut xi, &mut trial);
                    e = en;
                    report.energies.push(e);
                    accepted = true;
                    break;
                }
                _ => {
                    report.rejected += 1;
                    step = step * T::lit(0.5);
                }
            }
        }
        if !accepted {
            // stationary up to rounding: nothing left to gain
            break;
        }
        remaining -= step;
        hint = step;
        h = (step * T::lit(1.5)).min(nominal);
    }
    snap_boundary(mesh, &mut xi, triple.reference.vertices());

    let comp_mesh = triple.reference.with_vertices(xi.clone())?;
    let new_x = map_reference(mesh, &comp_mesh, triple.reference.vertices())?;
    for (a, b) in new_x.iter().zip(mesh.vertices()) {
        report.max_displacement = report.max_displacement.max(small::distance(a, b));
    }
    let physical = mesh.with_vertices(new_x)?;
    Ok((
        MeshTriple { physical, computational: xi, reference: triple.reference.clone(), substep_hint: Some(hint) },
        report,
    ))
}

/// Restores exact boundary coordinates after floating-point drift.
fn snap_boundary<T: Real, const D: usize>(mesh: &SimplicialMesh<T, D>, pts: &mut [Point<T, D>], base: &[Point<T, D>]) {
    let topo = mesh.topology();
    for j in 0..pts.len() {
        match topo.boundary(j) {
            Boundary::Corner => pts[j] = base[j],
            Boundary::Edge(id) => {
                let axis = id as usize / 2;
                pts[j][axis] = base[j][axis];
            }
            Boundary::Interior => {}
        }
    }
    let dom = mesh.domain();
    for j in 0..pts.len() {
        if let Some(b) = topo.partner(j) {
            if b > j {
                let axis = match topo.boundary(j) {
                    Boundary::Edge(id) => id as usize / 2,
                    _ => continue,
                };
                for a in 0..D {
                    if a != axis {
                        pts[b][a] = pts[j][a];
                    }
                }
            }
        }
        for a in 0..D {
            pts[j][a] = pts[j][a].max(dom.lo[a]).min(dom.hi[a]);
        }
    }
}

/// Evaluates the piecewise-linear map `comp -> physical` at `points`.
fn map_reference<T: Real, const D: usize>(
    physical: &SimplicialMesh<T, D>,
    comp: &SimplicialMesh<T, D>,
    points: &[Point<T, D>],
) -> Result<Vec<Point<T, D>>> {
    let mut out = Vec::with_capacity(points.len());
    for (j, p) in points.iter().enumerate() {
        let hint = comp.topology().patch(j)[0].0;
        let (k, b) = comp.locate_from(hint, p)?;
        let e = physical.element(k);
        let mut x = [T::zero(); D];
        for i in 0..=D {
            x = small::add(&x, &small::scale(physical.vertex(e[i]), b[i]));
        }
        out.push(x);
    }
    snap_boundary(physical, &mut out, physical.vertices());
    Ok(out)
}

/// Metric of `source` transferred to `target`.
///
/// Each target element averages, with volume weights, the source elements
/// whose centroids it contains; the part of its volume not accounted for
/// that way takes the linear interpolant of the volume-weighted source
/// vertex tensors at its centroid. Fine source features therefore survive
/// on a coarse target instead of being missed by point sampling, and on a
/// finer target the result is the continuous interpolant. Every tensor is
/// a convex combination of SPD tensors.
pub fn transfer_metric<T: Real, const D: usize>(
    source: &SimplicialMesh<T, D>,
    metric: &MetricField<T, D>,
    target: &SimplicialMesh<T, D>,
) -> Result<MetricField<T, D>> {
    let vt: Vec<SMat<T, D>> = (0..source.n_vertices()).map(|j| metric.vertex_tensor(source, j)).collect();
    let mut acc = vec![SMat::zeros(); target.n_elements()];
    let mut covered = vec![T::zero(); target.n_elements()];
    let dom = target.domain();
    let mut hint = 0;
    for k in 0..source.n_elements() {
        let (e, _) = target.locate_from(hint, &dom.clamp(&source.centroid(k)))?;
        hint = e;
        let v = source.volume(k);
        acc[e] = acc[e] + metric.get(k).scale(v);
        covered[e] += v;
    }
    let mut hint = 0;
    let tensors = (0..target.n_elements())
        .map(|k| {
            let vol = target.volume(k);
            let rest = (vol - covered[k]).max(T::zero());
            let mut m = acc[k];
            if rest > T::zero() {
                let (e, b) = source.locate_from(hint, &target.centroid(k))?;
                hint = e;
                let mut p = SMat::zeros();
                for (i, &v) in source.element(e).iter().enumerate() {
                    p = p + vt[v].scale(b[i]);
                }
                m = m + p.scale(rest);
            }
            Ok(m.scale(T::one() / (covered[k] + rest)).symmetrize())
        })
        .collect::<Result<Vec<_>>>()?;
    MetricField::new(target, tensors)
}

/// Drives the previous common mesh towards the steady state of the mesh
/// equation for `metric`, which is defined on the previous common mesh.
pub fn generate_common_mesh<T: Real, const D: usize>(
    previous: &MeshTriple<T, D>,
    metric: &MetricField<T, D>,
    params: &MmpdeParams<T>,
) -> Result<(MeshTriple<T, D>, Vec<MoveReport<T>>)> {
    let source = previous.physical.clone();
    generate_common_mesh_with(previous, params, |mesh| transfer_metric(&source, metric, mesh))
}

/// [`generate_common_mesh`] with the metric supplied on each iterate by
/// `metric_on`, for metrics known in closed form.
pub fn generate_common_mesh_with<T: Real, const D: usize>(
    previous: &MeshTriple<T, D>,
    params: &MmpdeParams<T>,
    metric_on: impl Fn(&SimplicialMesh<T, D>) -> Result<MetricField<T, D>>,
) -> Result<(MeshTriple<T, D>, Vec<MoveReport<T>>)> {
    let tol = params.common_tol * previous.physical.mean_diameter();
    let mut triple = previous.clone();
    let mut reports = Vec::new();
    for _ in 0..params.common_max_iters {
        let current = metric_on(&triple.physical)?;
        let (next, report) = move_mesh(&triple, &current, params, params.common_dt)?;
        let done = report.max_displacement < tol;
        reports.push(report);
        triple = next;
        if done {
            break;
        }
    }
    Ok((triple, reports))
}

/// Moves a member's mesh towards the Hessian metric of its (analysis)
/// state and carries the state across with the conservative DG transfer.
pub fn remesh_member<T: Real, const D: usize>(
    state: &DgState<T>,
    triple: &MeshTriple<T, D>,
    solver: &SolverParams<T>,
    params: &MmpdeParams<T>,
) -> Result<(DgState<T>, MeshTriple<T, D>)> {
    let metric = state_metric(&triple.physical, state, solver)?;
    let (next, _) = move_mesh(triple, &metric, params, params.common_dt)?;
    let moved = dg_interpolate(state, &triple.physical, &next.physical)?;
    Ok((moved, next))
}
